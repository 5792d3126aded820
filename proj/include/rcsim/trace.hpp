// Audited output stream: line-delimited records in a stable field order plus
// a final digest line, so equal-seed runs can be compared byte for byte.
#pragma once

#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "rcsim/digest.hpp"
#include "rcsim/engine.hpp"

namespace rcsim {

using ordered_json = nlohmann::ordered_json;

struct TraceEvent {
    Tick tick = 0;
    std::string kind;
    std::string actor;
    ordered_json fields;

    std::string line() const {
        ordered_json j;
        j["tick"] = tick;
        j["kind"] = kind;
        j["actor"] = actor;
        for (auto& [k, v] : fields.items()) j[k] = v;
        return j.dump();
    }
};

class Trace {
public:
    void emit(Tick tick, std::string kind, std::string actor, ordered_json fields = {}) {
        events_.push_back(TraceEvent{tick, std::move(kind), std::move(actor), std::move(fields)});
    }

    const std::vector<TraceEvent>& events() const { return events_; }

    Digest digest() const {
        Sha256 h;
        for (const auto& e : events_) {
            auto l = e.line();
            h.update(l.data(), l.size());
            h.update("\n", 1);
        }
        return Digest{h.finish()};
    }

    void write_jsonl(const std::string& path) const {
        std::ofstream out(path);
        for (const auto& e : events_) out << e.line() << "\n";
        ordered_json tail;
        tail["digest"] = digest().hex();
        out << tail.dump() << "\n";
    }

    static std::vector<TraceEvent> read_jsonl(const std::string& path) {
        std::ifstream in(path);
        std::vector<TraceEvent> events;
        std::string line;
        while (std::getline(in, line)) {
            if (line.empty()) continue;
            auto j = ordered_json::parse(line);
            if (!j.contains("kind")) continue;  // digest tail line
            TraceEvent e;
            e.tick = j.at("tick").get<Tick>();
            e.kind = j.at("kind").get<std::string>();
            e.actor = j.at("actor").get<std::string>();
            for (auto& [k, v] : j.items())
                if (k != "tick" && k != "kind" && k != "actor") e.fields[k] = v;
            events.push_back(std::move(e));
        }
        return events;
    }

private:
    std::vector<TraceEvent> events_;
};

}  // namespace rcsim
