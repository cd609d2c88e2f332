#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

#include "fuzztune/model.hpp"

namespace fzt {

inline constexpr char kCheckpointMagic[4] = {'F', 'Z', 'T', 'M'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

// Layout (little-endian):
//   "FZTM" | u32 version | u32 len + arch JSON | u32 param count |
//   per param: u16 len + name | u8 rank | u32 dims[rank] | f64 values
namespace detail {

class ByteWriter {
 public:
  void raw(const void* p, std::size_t n) {
    const auto* c = static_cast<const unsigned char*>(p);
    bytes_.insert(bytes_.end(), c, c + n);
  }
  template <class U>
  void le(U v) {
    for (std::size_t i = 0; i < sizeof(U); ++i) bytes_.push_back(static_cast<unsigned char>(v >> (8 * i)));
  }
  void f64(double v) { le(std::bit_cast<std::uint64_t>(v)); }
  const std::vector<unsigned char>& bytes() const { return bytes_; }

 private:
  std::vector<unsigned char> bytes_;
};

class ByteReader {
 public:
  explicit ByteReader(std::vector<unsigned char> b) : bytes_(std::move(b)) {}

  void need(std::size_t n, const char* what) const {
    require(pos_ + n <= bytes_.size(), ErrorCode::TruncatedPayload, std::string("checkpoint truncated in ") + what);
  }
  template <class U>
  U le(const char* what) {
    need(sizeof(U), what);
    U v = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(U{bytes_[pos_ + i]} << (8 * i));
    pos_ += sizeof(U);
    return v;
  }
  double f64(const char* what) { return std::bit_cast<double>(le<std::uint64_t>(what)); }
  std::string str(std::size_t n, const char* what) {
    need(n, what);
    std::string s(bytes_.begin() + static_cast<std::ptrdiff_t>(pos_),
                  bytes_.begin() + static_cast<std::ptrdiff_t>(pos_ + n));
    pos_ += n;
    return s;
  }

 private:
  std::vector<unsigned char> bytes_;
  std::size_t pos_ = 0;
};

}  // namespace detail

inline std::vector<unsigned char> encode_checkpoint(const Model& model) {
  detail::ByteWriter w;
  w.raw(kCheckpointMagic, 4);
  w.le<std::uint32_t>(kCheckpointVersion);
  const auto arch = canonical_json(model.arch());
  w.le<std::uint32_t>(static_cast<std::uint32_t>(arch.size()));
  w.raw(arch.data(), arch.size());
  const auto params = model.parameters();
  w.le<std::uint32_t>(static_cast<std::uint32_t>(params.size()));
  for (const auto& p : params) {
    w.le<std::uint16_t>(static_cast<std::uint16_t>(p.name.size()));
    w.raw(p.name.data(), p.name.size());
    w.le<std::uint8_t>(static_cast<std::uint8_t>(p.tensor->rank()));
    for (auto d : p.tensor->shape()) w.le<std::uint32_t>(static_cast<std::uint32_t>(d));
    for (double v : p.tensor->values()) w.f64(v);
  }
  return w.bytes();
}

inline Model decode_checkpoint(std::vector<unsigned char> bytes) {
  detail::ByteReader r(std::move(bytes));
  const auto magic = r.str(4, "magic");
  require(std::memcmp(magic.data(), kCheckpointMagic, 4) == 0, ErrorCode::BadMagic, "not a checkpoint file");
  const auto version = r.le<std::uint32_t>("version");
  require(version == kCheckpointVersion, ErrorCode::VersionMismatch,
          "checkpoint version " + std::to_string(version) + ", expected " + std::to_string(kCheckpointVersion));
  const auto arch_len = r.le<std::uint32_t>("arch length");
  const auto arch_text = r.str(arch_len, "arch spec");
  ArchSpec arch;
  try {
    arch = arch_from_json(nlohmann::json::parse(arch_text));
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::ArchMismatch, std::string("arch spec is not valid JSON: ") + e.what());
  } catch (const Error& e) {
    throw Error(ErrorCode::ArchMismatch, e.what());
  }
  try {
    arch.validate();
  } catch (const Error& e) {
    throw Error(ErrorCode::ArchMismatch, e.what());
  }

  Model model = build_model(arch);
  const auto expected = model.parameters();
  const auto count = r.le<std::uint32_t>("parameter count");
  require(count == expected.size(), ErrorCode::ArchMismatch,
          "checkpoint holds " + std::to_string(count) + " parameters, arch needs " + std::to_string(expected.size()));
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto name_len = r.le<std::uint16_t>("parameter name length");
    const auto name = r.str(name_len, "parameter name");
    const auto rank = r.le<std::uint8_t>("parameter rank");
    require(rank >= 1, ErrorCode::ArchMismatch, "parameter '" + name + "' has rank 0");
    Shape shape;
    for (std::uint8_t k = 0; k < rank; ++k) shape.push_back(r.le<std::uint32_t>("parameter dims"));
    const Tensor& slot = [&]() -> const Tensor& {
      try {
        return model.parameter(name);
      } catch (const Error&) {
        throw Error(ErrorCode::ArchMismatch, "unexpected parameter '" + name + "'");
      }
    }();
    require(slot.shape() == shape, ErrorCode::ArchMismatch,
            "parameter '" + name + "' has shape " + shape_string(shape) + ", arch expects " +
                shape_string(slot.shape()));
    std::vector<double> values(shape_size(shape));
    for (auto& v : values) v = r.f64("parameter values");
    try {
      model.set_parameter(name, Tensor(shape, std::move(values)));
    } catch (const Error& e) {
      if (e.code() == ErrorCode::NonFinite) throw Error(ErrorCode::ArchMismatch, e.what());
      throw;
    }
  }
  return model;
}

inline void save_checkpoint(const Model& model, const std::string& path) {
  const auto bytes = encode_checkpoint(model);
  std::ofstream out(path, std::ios::binary);
  require(static_cast<bool>(out), ErrorCode::Io, "cannot write '" + path + "'");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  require(static_cast<bool>(out), ErrorCode::Io, "write failed for '" + path + "'");
}

inline Model load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  require(static_cast<bool>(in), ErrorCode::Io, "cannot open '" + path + "'");
  return decode_checkpoint({std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()});
}

}  // namespace fzt
