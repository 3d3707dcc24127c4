#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "core/error.hpp"

namespace hsflow {

static_assert(std::endian::native == std::endian::little,
              "on-disk formats are little-endian and read/written via memcpy");

// Little-endian binary reader that tracks the byte offset so parse errors
// can point at the offending position.
class BinReader {
  public:
    BinReader(std::istream& in, std::string path) : in_(in), path_(std::move(path)) {}

    uint64_t offset() const { return offset_; }

    void read_raw(void* dst, size_t len, const char* what) {
        in_.read(static_cast<char*>(dst), static_cast<std::streamsize>(len));
        if (static_cast<size_t>(in_.gcount()) != len) {
            throw Error::format(path_ + ": truncated while reading " + std::string(what) +
                                " at byte offset " + std::to_string(offset_));
        }
        offset_ += len;
    }

    template <typename T>
    T read_pod(const char* what) {
        T v;
        read_raw(&v, sizeof(T), what);
        return v;
    }

    uint64_t read_u64(const char* what) { return read_pod<uint64_t>(what); }
    double read_f64(const char* what) { return read_pod<double>(what); }

    template <typename T>
    void read_vec(std::vector<T>& out, size_t count, const char* what) {
        out.resize(count);
        if (count > 0) read_raw(out.data(), count * sizeof(T), what);
    }

    void expect_magic(const char magic[4]) {
        char got[4];
        read_raw(got, 4, "magic");
        if (std::memcmp(got, magic, 4) != 0) {
            throw Error::format(path_ + ": bad magic at byte offset 0, expected \"" +
                                std::string(magic, 4) + "\"");
        }
    }

    bool at_eof() {
        in_.peek();
        return in_.eof();
    }

  private:
    std::istream& in_;
    std::string path_;
    uint64_t offset_ = 0;
};

class BinWriter {
  public:
    BinWriter(std::ostream& out, std::string path) : out_(out), path_(std::move(path)) {}

    void write_raw(const void* src, size_t len) {
        out_.write(static_cast<const char*>(src), static_cast<std::streamsize>(len));
        if (!out_) throw Error::usage(path_ + ": write failed");
    }

    template <typename T>
    void write_pod(const T& v) {
        write_raw(&v, sizeof(T));
    }

    template <typename T>
    void write_vec(const std::vector<T>& v) {
        if (!v.empty()) write_raw(v.data(), v.size() * sizeof(T));
    }

  private:
    std::ostream& out_;
    std::string path_;
};

inline std::ifstream open_input(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error::usage("cannot open file: " + path);
    return in;
}

inline std::ofstream open_output(const std::string& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error::usage("cannot create file: " + path);
    return out;
}

}  // namespace hsflow
