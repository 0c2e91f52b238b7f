#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "splitleak/error.hpp"

namespace splitleak {

using Bytes = std::vector<std::uint8_t>;

static_assert(std::endian::native == std::endian::little,
              "binary containers assume a little-endian host");

/// Little-endian append-only encoder.
class ByteWriter {
 public:
  void put_tag(std::string_view tag) { out_.insert(out_.end(), tag.begin(), tag.end()); }
  void put_u8(std::uint8_t v) { out_.push_back(v); }
  void put_u32(std::uint32_t v) { put_raw(v); }
  void put_u64(std::uint64_t v) { put_raw(v); }
  void put_f32(float v) { put_raw(v); }
  void put_f64(double v) { put_raw(v); }

  Bytes take() && { return std::move(out_); }
  const Bytes& bytes() const noexcept { return out_; }

 private:
  template <typename T>
  void put_raw(T v) {
    std::uint8_t buf[sizeof(T)];
    std::memcpy(buf, &v, sizeof(T));
    out_.insert(out_.end(), buf, buf + sizeof(T));
  }
  Bytes out_;
};

/// Little-endian cursor over a byte span. Every read checks bounds and throws
/// DecodeError(kTruncated) naming the expected and available byte counts.
class ByteReader {
 public:
  ByteReader(std::span<const std::uint8_t> data, std::string context)
      : data_(data), context_(std::move(context)) {}

  std::uint8_t u8() { return get_raw<std::uint8_t>(); }
  std::uint32_t u32() { return get_raw<std::uint32_t>(); }
  std::uint64_t u64() { return get_raw<std::uint64_t>(); }
  float f32() { return get_raw<float>(); }
  double f64() { return get_raw<double>(); }

  bool tag_matches(std::string_view tag) {
    require(tag.size());
    const bool ok = std::memcmp(data_.data() + pos_, tag.data(), tag.size()) == 0;
    pos_ += tag.size();
    return ok;
  }

  /// Throws unless `count` more bytes are available.
  void require(std::size_t count) const {
    if (data_.size() - pos_ < count) {
      throw DecodeError(DecodeErrorKind::kTruncated,
                        context_ + ": truncated, expected " + std::to_string(pos_ + count) +
                            " bytes, have " + std::to_string(data_.size()));
    }
  }

  std::size_t position() const noexcept { return pos_; }
  std::size_t remaining() const noexcept { return data_.size() - pos_; }

 private:
  template <typename T>
  T get_raw() {
    require(sizeof(T));
    T v;
    std::memcpy(&v, data_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }

  std::span<const std::uint8_t> data_;
  std::size_t pos_ = 0;
  std::string context_;
};

Bytes read_file(const std::string& path);
void write_file(const std::string& path, std::span<const std::uint8_t> data);

}  // namespace splitleak
