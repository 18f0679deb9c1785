#pragma once

#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <vector>

namespace voxray {

// PGM (P5) and PPM (P6) helpers. 16-bit PGM uses the big-endian
// convention of the format.
void write_pgm8(const std::string& path, int width, int height,
                const std::vector<uint8_t>& data);
void write_pgm16(const std::string& path, int width, int height,
                 const std::vector<uint16_t>& data);
void write_ppm(const std::string& path, int width, int height,
               const std::vector<uint8_t>& rgb);
std::vector<uint8_t> read_pgm8(const std::string& path, int& width,
                               int& height);
std::vector<uint16_t> read_pgm16(const std::string& path, int& width,
                                 int& height);

/// key=value file with '#' comments. Unknown keys are a ConfigError.
std::map<std::string, std::string> parse_kv_file(
    const std::string& path, const std::set<std::string>& allowed_keys);
std::map<std::string, std::string> parse_kv_text(
    const std::string& text, const std::set<std::string>& allowed_keys,
    const std::string& origin = "<text>");

double kv_double(const std::map<std::string, std::string>& kv,
                 const std::string& key, double fallback);
int kv_int(const std::map<std::string, std::string>& kv,
           const std::string& key, int fallback);
std::string kv_string(const std::map<std::string, std::string>& kv,
                      const std::string& key, const std::string& fallback);

}  // namespace voxray
