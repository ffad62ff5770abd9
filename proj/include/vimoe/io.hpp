// Copyright (c) 2026 The vimoe-lab Authors
// SPDX-License-Identifier: Apache-2.0
//
// Little-endian binary readers/writers shared by the container formats.
// Readers track the byte offset so format errors can name the exact spot.

#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "vimoe/errors.hpp"

namespace vimoe::io {

class Writer {
 public:
  void raw(const void* p, std::size_t n) {
    const char* c = static_cast<const char*>(p);
    buf_.insert(buf_.end(), c, c + n);
  }
  template <class T>
  void pod(T v) {
    raw(&v, sizeof(T));
  }
  void magic(const char m[4]) { raw(m, 4); }
  void str(const std::string& s) {
    pod<std::uint32_t>(static_cast<std::uint32_t>(s.size()));
    raw(s.data(), s.size());
  }
  template <class T>
  void pod_array(const T* p, std::size_t n) {
    raw(p, n * sizeof(T));
  }

  const std::vector<char>& bytes() const { return buf_; }

  void to_file(const std::string& path) const {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw format_error("cannot open " + path + " for writing");
    f.write(buf_.data(), static_cast<std::streamsize>(buf_.size()));
    if (!f) throw format_error("short write to " + path);
  }

 private:
  std::vector<char> buf_;
};

class Reader {
 public:
  explicit Reader(std::vector<char> bytes, std::string origin = "buffer")
      : buf_(std::move(bytes)), origin_(std::move(origin)) {}

  static Reader from_file(const std::string& path) {
    std::ifstream f(path, std::ios::binary | std::ios::ate);
    if (!f) throw format_error("cannot open " + path);
    const auto size = f.tellg();
    f.seekg(0);
    std::vector<char> bytes(static_cast<std::size_t>(size));
    f.read(bytes.data(), size);
    if (!f) throw format_error("short read from " + path);
    return Reader(std::move(bytes), path);
  }

  void raw(void* p, std::size_t n) {
    if (pos_ + n > buf_.size())
      throw format_error(origin_ + ": truncated at byte " + std::to_string(pos_) + ", need " +
                         std::to_string(n) + " more");
    std::memcpy(p, buf_.data() + pos_, n);
    pos_ += n;
  }
  template <class T>
  T pod() {
    T v;
    raw(&v, sizeof(T));
    return v;
  }
  void expect_magic(const char m[4], const std::string& what) {
    char got[4];
    raw(got, 4);
    if (std::memcmp(got, m, 4) != 0)
      throw format_error(origin_ + ": bad " + what + " magic at byte 0");
  }
  std::string str() {
    const std::size_t at = pos_;
    const auto n = pod<std::uint32_t>();
    std::string s(n, '\0');
    if (n > 0) {
      if (pos_ + n > buf_.size())
        throw format_error(origin_ + ": truncated string at byte " + std::to_string(at));
      std::memcpy(s.data(), buf_.data() + pos_, n);
      pos_ += n;
    }
    return s;
  }
  template <class T>
  std::vector<T> pod_array(std::size_t n) {
    std::vector<T> v(n);
    if (n > 0) raw(v.data(), n * sizeof(T));
    return v;
  }

  std::size_t pos() const { return pos_; }
  std::size_t remaining() const { return buf_.size() - pos_; }
  const std::vector<char>& bytes() const { return buf_; }
  const std::string& origin() const { return origin_; }

 private:
  std::vector<char> buf_;
  std::size_t pos_ = 0;
  std::string origin_;
};

inline std::uint64_t fnv1a_bytes(const char* p, std::size_t n) {
  std::uint64_t h = 0xCBF29CE484222325ULL;
  for (std::size_t i = 0; i < n; ++i) {
    h ^= static_cast<unsigned char>(p[i]);
    h *= 0x100000001B3ULL;
  }
  return h;
}

}  // namespace vimoe::io
