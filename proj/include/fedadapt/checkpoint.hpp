#pragma once

#include <cstddef>
#include <iosfwd>

#include "fedadapt/adapter.hpp"
#include "fedadapt/model.hpp"

// Binary formats, little-endian. Layouts are documented in docs/formats.md.

namespace fedadapt {

inline constexpr std::uint32_t kModelFormatVersion = 1;
inline constexpr std::uint32_t kPayloadFormatVersion = 1;
inline constexpr std::size_t kPayloadHeaderBytes = 32;

/// Spec, adapter layout, policy and every parameter buffer at 64-bit.
void write_model(std::ostream& out, const ModelState& model);
ModelState read_model(std::istream& in);

/// Adapter-only checkpoint: 32-byte header followed by the trainable
/// scalars in canonical order at scalar_width bytes each (4 or 8).
void write_payload(std::ostream& out, const AdapterPayload& payload, std::size_t scalar_width);

/// Splits the scalars using the trainable parameters of `layout`.
AdapterPayload read_payload(std::istream& in, const ModelState& layout);

constexpr std::size_t payload_wire_bytes(std::size_t scalars, std::size_t scalar_width) {
  return kPayloadHeaderBytes + scalars * scalar_width;
}

}  // namespace fedadapt
