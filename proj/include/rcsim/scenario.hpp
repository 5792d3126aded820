// Scenario files: a human-writable JSON tree describing topology, timing,
// policy, clients, and the fault schedule.
#pragma once

#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "rcsim/config.hpp"

namespace rcsim {

struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

struct FaultSpec {
    std::string cls;  // F1..F16
    Tick at = 0;
    Tick until = kTickForever;
    BgId bg = 0;
    std::uint32_t sl = 0;    // local SL index within bg
    std::uint32_t node = 0;  // local node index within SL
    std::vector<std::vector<std::string>> components;  // partition groups, entity names
    Cycle trigger_cycle = 0;                            // F16: kill after completing this cycle
    std::string behavior;                               // byzantine behavior override
};

struct Scenario {
    std::string name = "scenario";
    std::uint64_t seed = 1;
    Tick duration = 50'000;
    Topology topo;
    Timing timing;
    Policy policy;
    ClientSpec clients;
    std::vector<FaultSpec> faults;
    bool assumption_breach = false;
    bool expect_liveness = true;
    Cycle measured_cycles = 40;
    std::uint32_t liveness_threshold = 30;
    // node sets that must not commit during fault windows (derived or given)
    std::vector<std::string> minority_entities;

    void validate() const {
        topo.validate();
        if (duration == 0) throw ConfigError("scenario: duration must be positive");
        if (timing.batch == 0) throw ConfigError("scenario: batch must be positive");
        if (timing.delta == 0 || timing.big_delta <= timing.delta_net_max)
            throw ConfigError("scenario: need delta_net_max < big_delta");
        for (const auto& f : faults) {
            if (f.cls.empty() || f.cls[0] != 'F')
                throw ConfigError("fault: class must be F1..F16, got '" + f.cls + "'");
            if (f.bg >= topo.bgs) throw ConfigError("fault: bg out of range in " + f.cls);
            if (f.sl >= topo.sls_per_bg) throw ConfigError("fault: sl out of range in " + f.cls);
            if (f.node >= topo.nodes_per_sl)
                throw ConfigError("fault: node out of range in " + f.cls);
        }
    }
};

namespace detail {

template <typename T>
T get_or(const nlohmann::json& j, const char* key, T fallback) {
    auto it = j.find(key);
    if (it == j.end()) return fallback;
    return it->get<T>();
}

}  // namespace detail

inline Scenario parse_scenario(const nlohmann::json& j) {
    Scenario sc;
    try {
        sc.name = detail::get_or<std::string>(j, "name", "scenario");
        sc.seed = detail::get_or<std::uint64_t>(j, "seed", 1);
        sc.duration = detail::get_or<Tick>(j, "duration_ticks", 50'000);
        sc.assumption_breach = detail::get_or<bool>(j, "assumption_breach", false);
        sc.expect_liveness = detail::get_or<bool>(j, "expect_liveness", true);
        sc.measured_cycles = detail::get_or<Cycle>(j, "measured_cycles", 40);
        sc.liveness_threshold = detail::get_or<std::uint32_t>(j, "liveness_threshold", 30);
        if (j.contains("topology")) {
            const auto& t = j.at("topology");
            sc.topo.bgs = detail::get_or<std::uint32_t>(t, "bgs", 3);
            sc.topo.sls_per_bg = detail::get_or<std::uint32_t>(t, "sls_per_bg", 4);
            sc.topo.nodes_per_sl = detail::get_or<std::uint32_t>(t, "nodes_per_sl", 3);
            sc.topo.f = detail::get_or<std::uint32_t>(t, "f", (sc.topo.nodes_per_sl - 1) / 2);
            sc.topo.f_i = detail::get_or<std::uint32_t>(t, "f_i", (sc.topo.sls_per_bg - 1) / 3);
            sc.topo.f_g = detail::get_or<std::uint32_t>(t, "f_g", (sc.topo.bgs - 1) / 3);
        }
        if (j.contains("timing")) {
            const auto& t = j.at("timing");
            sc.timing.delta = detail::get_or<Tick>(t, "delta", 5);
            sc.timing.delta_net_max = detail::get_or<Tick>(t, "delta_net_max", 100);
            sc.timing.big_delta = detail::get_or<Tick>(t, "big_delta", 500);
            sc.timing.batch = detail::get_or<Tick>(t, "b", 1000);
            sc.timing.pipeline_k = detail::get_or<std::uint32_t>(t, "k", 2);
            sc.timing.epoch_cycles = detail::get_or<std::uint32_t>(t, "epoch_cycles", 32);
            sc.timing.horizon = detail::get_or<std::uint32_t>(t, "h", 8);
            sc.timing.dedup_window = detail::get_or<std::uint32_t>(t, "dedup_window", 8);
            sc.timing.representatives = detail::get_or<std::uint32_t>(t, "representatives", 2);
        }
        if (j.contains("policy")) {
            const auto& p = j.at("policy");
            std::string mode = detail::get_or<std::string>(p, "mode", "cm");
            if (mode == "cm") {
                sc.policy.mode = RunMode::Cm;
            } else if (mode == "global") {
                sc.policy.mode = RunMode::Global;
            } else {
                throw ConfigError("policy.mode must be 'cm' or 'global'");
            }
            std::string an = detail::get_or<std::string>(p, "analysis", "full");
            if (an == "full") {
                sc.policy.analysis = AnalysisPolicy::Full;
            } else if (an == "replication") {
                sc.policy.analysis = AnalysisPolicy::Replication;
            } else {
                throw ConfigError("policy.analysis must be 'full' or 'replication'");
            }
            sc.policy.replication_r = detail::get_or<std::uint32_t>(p, "replication_r", 2);
            std::string sm = detail::get_or<std::string>(p, "submit", "leader");
            sc.policy.submit = sm == "all" ? CmSubmitMode::All : CmSubmitMode::Leader;
        }
        if (j.contains("clients")) {
            const auto& c = j.at("clients");
            sc.clients.count = detail::get_or<std::uint32_t>(c, "count", 6);
            sc.clients.mean_gap = detail::get_or<Tick>(c, "mean_gap", 400);
            sc.clients.payload_bytes = detail::get_or<std::uint32_t>(c, "payload_bytes", 32);
        }
        if (j.contains("faults")) {
            for (const auto& fj : j.at("faults")) {
                FaultSpec f;
                f.cls = fj.at("class").get<std::string>();
                f.at = detail::get_or<Tick>(fj, "at", 0);
                f.until = detail::get_or<Tick>(fj, "until", kTickForever);
                f.bg = detail::get_or<BgId>(fj, "bg", 0);
                f.sl = detail::get_or<std::uint32_t>(fj, "sl", 0);
                f.node = detail::get_or<std::uint32_t>(fj, "node", 0);
                f.trigger_cycle = detail::get_or<Cycle>(fj, "trigger_cycle", 0);
                f.behavior = detail::get_or<std::string>(fj, "behavior", "");
                if (fj.contains("components"))
                    f.components = fj.at("components").get<std::vector<std::vector<std::string>>>();
                sc.faults.push_back(std::move(f));
            }
        }
        if (j.contains("minority_entities"))
            sc.minority_entities = j.at("minority_entities").get<std::vector<std::string>>();
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("scenario parse error: ") + e.what());
    }
    sc.validate();
    return sc;
}

inline Scenario load_scenario(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open scenario file: " + path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(path + ": " + e.what());
    }
    return parse_scenario(j);
}

}  // namespace rcsim
