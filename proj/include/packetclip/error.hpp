#pragma once

#include <stdexcept>
#include <string>

namespace packetclip {

// Error categories; mirrored one-to-one by the pc_status codes of the C API.
enum class Err {
  io,
  unsupported_format,
  corrupt_capture,
  schema,
  row,
  template_error,
  provider,
  config,
  shape,
  graph,
  metric,
  state,
  numeric,
};

class Error : public std::runtime_error {
public:
  Error(Err code, std::string msg) : std::runtime_error(std::move(msg)), code_(code) {}
  Err code() const { return code_; }

private:
  Err code_;
};

[[noreturn]] inline void fail(Err code, const std::string& msg) { throw Error(code, msg); }

inline const char* err_name(Err code) {
  switch (code) {
    case Err::io: return "io";
    case Err::unsupported_format: return "unsupported-format";
    case Err::corrupt_capture: return "corrupt-capture";
    case Err::schema: return "schema-error";
    case Err::row: return "row-error";
    case Err::template_error: return "template-error";
    case Err::provider: return "provider-error";
    case Err::config: return "config-error";
    case Err::shape: return "shape-error";
    case Err::graph: return "graph-error";
    case Err::metric: return "undefined-metric";
    case Err::state: return "state-error";
    case Err::numeric: return "numeric-error";
  }
  return "unknown";
}

}  // namespace packetclip
