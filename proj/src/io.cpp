#include "voxray/io.hpp"

#include <fstream>
#include <sstream>

#include "voxray/common.hpp"

namespace voxray {

namespace {

std::ofstream open_out(const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open for writing: " + path);
  return f;
}

std::ifstream open_in(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open for reading: " + path);
  return f;
}

void read_pnm_header(std::istream& in, const std::string& magic, int& width,
                     int& height, int& maxval, const std::string& path) {
  std::string m;
  in >> m;
  if (m != magic) throw IoError("bad magic in " + path);
  // skip comments
  auto next_token = [&](int& out) {
    while (true) {
      in >> std::ws;
      if (in.peek() == '#') {
        std::string line;
        std::getline(in, line);
        continue;
      }
      if (!(in >> out)) throw IoError("truncated header in " + path);
      return;
    }
  };
  next_token(width);
  next_token(height);
  next_token(maxval);
  in.get();  // single whitespace before raster
}

}  // namespace

void write_pgm8(const std::string& path, int width, int height,
                const std::vector<uint8_t>& data) {
  auto f = open_out(path);
  f << "P5\n" << width << " " << height << "\n255\n";
  f.write(reinterpret_cast<const char*>(data.data()),
          static_cast<std::streamsize>(data.size()));
}

void write_pgm16(const std::string& path, int width, int height,
                 const std::vector<uint16_t>& data) {
  auto f = open_out(path);
  f << "P5\n" << width << " " << height << "\n65535\n";
  for (uint16_t v : data) {
    char be[2] = {static_cast<char>(v >> 8), static_cast<char>(v & 0xFF)};
    f.write(be, 2);
  }
}

void write_ppm(const std::string& path, int width, int height,
               const std::vector<uint8_t>& rgb) {
  auto f = open_out(path);
  f << "P6\n" << width << " " << height << "\n255\n";
  f.write(reinterpret_cast<const char*>(rgb.data()),
          static_cast<std::streamsize>(rgb.size()));
}

std::vector<uint8_t> read_pgm8(const std::string& path, int& width,
                               int& height) {
  auto f = open_in(path);
  int maxval = 0;
  read_pnm_header(f, "P5", width, height, maxval, path);
  if (maxval != 255) throw IoError("expected 8-bit PGM: " + path);
  std::vector<uint8_t> data(static_cast<size_t>(width) * height);
  f.read(reinterpret_cast<char*>(data.data()),
         static_cast<std::streamsize>(data.size()));
  if (!f) throw IoError("truncated raster in " + path);
  return data;
}

std::vector<uint16_t> read_pgm16(const std::string& path, int& width,
                                 int& height) {
  auto f = open_in(path);
  int maxval = 0;
  read_pnm_header(f, "P5", width, height, maxval, path);
  if (maxval != 65535) throw IoError("expected 16-bit PGM: " + path);
  std::vector<uint16_t> data(static_cast<size_t>(width) * height);
  for (auto& v : data) {
    char be[2];
    f.read(be, 2);
    v = static_cast<uint16_t>((static_cast<uint8_t>(be[0]) << 8) |
                              static_cast<uint8_t>(be[1]));
  }
  if (!f) throw IoError("truncated raster in " + path);
  return data;
}

std::map<std::string, std::string> parse_kv_text(
    const std::string& text, const std::set<std::string>& allowed_keys,
    const std::string& origin) {
  std::map<std::string, std::string> kv;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos) continue;
    auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError(origin + ":" + std::to_string(lineno) +
                        ": expected key=value");
    auto trim = [](std::string s) {
      auto b = s.find_first_not_of(" \t\r");
      auto e = s.find_last_not_of(" \t\r");
      return b == std::string::npos ? std::string{} : s.substr(b, e - b + 1);
    };
    std::string key = trim(line.substr(0, eq));
    std::string val = trim(line.substr(eq + 1));
    if (!allowed_keys.count(key))
      throw ConfigError(origin + ":" + std::to_string(lineno) +
                        ": unknown key '" + key + "'");
    kv[key] = val;
  }
  return kv;
}

std::map<std::string, std::string> parse_kv_file(
    const std::string& path, const std::set<std::string>& allowed_keys) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot open config: " + path);
  std::stringstream ss;
  ss << f.rdbuf();
  return parse_kv_text(ss.str(), allowed_keys, path);
}

double kv_double(const std::map<std::string, std::string>& kv,
                 const std::string& key, double fallback) {
  auto it = kv.find(key);
  if (it == kv.end()) return fallback;
  try {
    return std::stod(it->second);
  } catch (const std::exception&) {
    throw ConfigError("bad numeric value for '" + key + "': " + it->second);
  }
}

int kv_int(const std::map<std::string, std::string>& kv,
           const std::string& key, int fallback) {
  auto it = kv.find(key);
  if (it == kv.end()) return fallback;
  try {
    return std::stoi(it->second);
  } catch (const std::exception&) {
    throw ConfigError("bad integer value for '" + key + "': " + it->second);
  }
}

std::string kv_string(const std::map<std::string, std::string>& kv,
                      const std::string& key, const std::string& fallback) {
  auto it = kv.find(key);
  return it == kv.end() ? fallback : it->second;
}

}  // namespace voxray
