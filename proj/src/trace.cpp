#include "fedadapt/trace.hpp"

#include <fstream>
#include <sstream>

#include "fedadapt/error.hpp"

namespace fedadapt {

void Trace::emit(const std::string& type, TraceEvent fields) {
  TraceEvent e;
  e["v"] = kTraceVersion;
  e["type"] = type;
  for (auto& [k, v] : fields.items()) e[k] = std::move(v);
  events_.push_back(std::move(e));
}

std::vector<const TraceEvent*> Trace::of_type(const std::string& type) const {
  std::vector<const TraceEvent*> out;
  for (const TraceEvent& e : events_)
    if (e.at("type") == type) out.push_back(&e);
  return out;
}

void Trace::write(std::ostream& out) const {
  for (const TraceEvent& e : events_) out << e.dump() << '\n';
}

std::string Trace::str() const {
  std::ostringstream s;
  write(s);
  return s.str();
}

Trace Trace::read(std::istream& in) {
  Trace t;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    TraceEvent e;
    try {
      e = TraceEvent::parse(line);
    } catch (const nlohmann::json::exception& ex) {
      throw ParseError("trace line " + std::to_string(lineno) + ": " + ex.what());
    }
    if (!e.is_object() || !e.contains("v") || !e.contains("type") || !e["type"].is_string()) {
      throw ParseError("trace line " + std::to_string(lineno) + ": missing \"v\" or \"type\"");
    }
    if (e["v"] != kTraceVersion) {
      throw ParseError("trace line " + std::to_string(lineno) + ": unsupported version " + e["v"].dump());
    }
    t.events_.push_back(std::move(e));
  }
  return t;
}

Trace Trace::read_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open trace " + path);
  return read(in);
}

void Trace::write_file(const std::string& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write trace " + path);
  write(out);
}

}  // namespace fedadapt
