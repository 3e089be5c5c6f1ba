#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <utility>

namespace featret {

std::string read_text_file(const std::filesystem::path& path);
void write_text_file(const std::filesystem::path& path, std::string_view content);
std::string sha256_hex(std::string_view bytes);
std::string trim(std::string_view s);

// Little-endian fixed-width encoding for the binary artifact containers.
void put_u32(std::string& out, std::uint32_t v);
void put_u64(std::string& out, std::uint64_t v);
void put_f64(std::string& out, double v);

// Bounds-checked cursor over a byte buffer; running past the end throws ValidationError
// mentioning what (e.g. "checkpoint is truncated").
class ByteReader {
public:
    ByteReader(std::string_view bytes, std::string what) : bytes_(bytes), what_(std::move(what)) {}

    std::string_view take(std::size_t n);
    std::uint32_t u32();
    std::uint64_t u64();
    double f64();
    bool at_end() const noexcept { return pos_ == bytes_.size(); }

private:
    std::uint64_t little_endian(std::size_t width);

    std::string_view bytes_;
    std::string what_;
    std::size_t pos_ = 0;
};

} // namespace featret
