#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "json.hpp"

namespace fedadapt {

inline constexpr int kTraceVersion = 1;

using TraceEvent = nlohmann::ordered_json;

/// Append-only list of session events, written as one JSON object per line.
/// Every event carries "v" (format version) and "type".
class Trace {
 public:
  /// Adds "v" and "type" in front of the given fields.
  void emit(const std::string& type, TraceEvent fields = TraceEvent::object());

  const std::vector<TraceEvent>& events() const { return events_; }
  std::vector<const TraceEvent*> of_type(const std::string& type) const;

  void write(std::ostream& out) const;
  std::string str() const;
  /// Throws ParseError naming the 1-based line of the first bad record.
  static Trace read(std::istream& in);
  static Trace read_file(const std::string& path);
  void write_file(const std::string& path) const;

 private:
  std::vector<TraceEvent> events_;
};

}  // namespace fedadapt
