#include "tensor_io.hpp"

#include <bit>
#include <cstring>
#include <istream>
#include <ostream>

namespace flab {

namespace {

template <typename T>
void put_le(std::vector<std::uint8_t>& out, T value) {
  static_assert(sizeof(T) == 4 || sizeof(T) == 8);
  using U = std::conditional_t<sizeof(T) == 4, std::uint32_t, std::uint64_t>;
  const U bits = std::bit_cast<U>(value);
  for (std::size_t i = 0; i < sizeof(T); ++i) out.push_back(static_cast<std::uint8_t>(bits >> (8 * i)));
}

template <typename T>
T get_le(const std::uint8_t* p) {
  using U = std::conditional_t<sizeof(T) == 4, std::uint32_t, std::uint64_t>;
  U bits = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) bits |= static_cast<U>(p[i]) << (8 * i);
  return std::bit_cast<T>(bits);
}

std::size_t dtype_size(const std::string& dtype) {
  if (dtype == "f32le" || dtype == "i32le") return 4;
  if (dtype == "f64le") return 8;
  fail(ErrorCode::kIo, "unknown dtype '" + dtype + "'");
}

template <typename T>
void write_entry(std::ostream& os, nlohmann::json header, std::span<const T> values, const char* dtype) {
  std::int64_t count = 1;
  require(header.contains("shape"), ErrorCode::kInvalidArgument, "dump header needs a shape");
  for (const auto& d : header.at("shape")) count *= d.get<std::int64_t>();
  require(count == static_cast<std::int64_t>(values.size()), ErrorCode::kShapeMismatch,
          "dump shape does not match payload size");
  header["dtype"] = dtype;
  std::vector<std::uint8_t> bytes;
  bytes.reserve(values.size() * sizeof(T));
  for (T v : values) put_le(bytes, v);
  os << header.dump() << '\n';
  os.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  require(static_cast<bool>(os), ErrorCode::kIo, "failed writing dump entry");
}

}  // namespace

std::vector<std::int64_t> DumpEntry::shape() const { return header.at("shape").get<std::vector<std::int64_t>>(); }

std::vector<double> DumpEntry::as_doubles() const {
  const std::string dt = dtype();
  std::vector<double> out;
  if (dt == "f32le") {
    for (std::size_t i = 0; i + 4 <= bytes.size(); i += 4) out.push_back(get_le<float>(&bytes[i]));
  } else if (dt == "f64le") {
    for (std::size_t i = 0; i + 8 <= bytes.size(); i += 8) out.push_back(get_le<double>(&bytes[i]));
  } else {
    fail(ErrorCode::kIo, "entry is not floating point");
  }
  return out;
}

std::vector<float> DumpEntry::as_floats() const {
  const auto d = as_doubles();
  return {d.begin(), d.end()};
}

std::vector<std::int32_t> DumpEntry::as_ints() const {
  require(dtype() == "i32le", ErrorCode::kIo, "entry is not i32le");
  std::vector<std::int32_t> out;
  for (std::size_t i = 0; i + 4 <= bytes.size(); i += 4) out.push_back(get_le<std::int32_t>(&bytes[i]));
  return out;
}

void write_f32(std::ostream& os, nlohmann::json header, std::span<const float> values) {
  write_entry(os, std::move(header), values, "f32le");
}

void write_f64(std::ostream& os, nlohmann::json header, std::span<const double> values) {
  write_entry(os, std::move(header), values, "f64le");
}

void write_i32(std::ostream& os, nlohmann::json header, std::span<const std::int32_t> values) {
  write_entry(os, std::move(header), values, "i32le");
}

std::vector<DumpEntry> read_dump(std::istream& is) {
  std::vector<DumpEntry> out;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    DumpEntry e;
    try {
      e.header = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& ex) {
      fail(ErrorCode::kIo, std::string("bad dump header: ") + ex.what());
    }
    std::int64_t count = 1;
    for (std::int64_t d : e.shape()) count *= d;
    const std::size_t n = static_cast<std::size_t>(count) * dtype_size(e.dtype());
    e.bytes.resize(n);
    is.read(reinterpret_cast<char*>(e.bytes.data()), static_cast<std::streamsize>(n));
    require(static_cast<std::size_t>(is.gcount()) == n, ErrorCode::kIo, "truncated dump payload");
    out.push_back(std::move(e));
  }
  return out;
}

}  // namespace flab
