#pragma once

#include "common.hpp"

#include <json.hpp>

#include <cstdint>
#include <iosfwd>
#include <span>
#include <vector>

namespace flab {

// Dump format: one JSON header line {"shape":[...],"dtype":...,...} then the raw
// little-endian row-major payload. Checkpoints concatenate several entries.
struct DumpEntry {
  nlohmann::json header;
  std::vector<std::uint8_t> bytes;

  std::vector<std::int64_t> shape() const;
  std::string dtype() const { return header.at("dtype").get<std::string>(); }
  std::vector<double> as_doubles() const;
  std::vector<float> as_floats() const;
  std::vector<std::int32_t> as_ints() const;
};

void write_f32(std::ostream& os, nlohmann::json header, std::span<const float> values);
void write_f64(std::ostream& os, nlohmann::json header, std::span<const double> values);
void write_i32(std::ostream& os, nlohmann::json header, std::span<const std::int32_t> values);

std::vector<DumpEntry> read_dump(std::istream& is);

}  // namespace flab
