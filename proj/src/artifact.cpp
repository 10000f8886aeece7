#include "prefixguard/artifact.hpp"

#include <chrono>
#include <cstring>
#include <ctime>
#include <fstream>
#include <sstream>

#include "prefixguard/common.hpp"

namespace prefixguard {

namespace {

// Compact SHA-256 (FIPS 180-4).
struct Sha256 {
  std::uint32_t h[8] = {0x6a09e667u, 0xbb67ae85u, 0x3c6ef372u, 0xa54ff53au,
                        0x510e527fu, 0x9b05688cu, 0x1f83d9abu, 0x5be0cd19u};
  std::uint8_t block[64];
  std::uint64_t total = 0;
  std::size_t fill = 0;

  static std::uint32_t rotr(std::uint32_t x, int n) {
    return (x >> n) | (x << (32 - n));
  }

  void process(const std::uint8_t* p) {
    static const std::uint32_t k[64] = {
        0x428a2f98, 0x71374491, 0xb5c0fbcf, 0xe9b5dba5, 0x3956c25b, 0x59f111f1,
        0x923f82a4, 0xab1c5ed5, 0xd807aa98, 0x12835b01, 0x243185be, 0x550c7dc3,
        0x72be5d74, 0x80deb1fe, 0x9bdc06a7, 0xc19bf174, 0xe49b69c1, 0xefbe4786,
        0x0fc19dc6, 0x240ca1cc, 0x2de92c6f, 0x4a7484aa, 0x5cb0a9dc, 0x76f988da,
        0x983e5152, 0xa831c66d, 0xb00327c8, 0xbf597fc7, 0xc6e00bf3, 0xd5a79147,
        0x06ca6351, 0x14292967, 0x27b70a85, 0x2e1b2138, 0x4d2c6dfc, 0x53380d13,
        0x650a7354, 0x766a0abb, 0x81c2c92e, 0x92722c85, 0xa2bfe8a1, 0xa81a664b,
        0xc24b8b70, 0xc76c51a3, 0xd192e819, 0xd6990624, 0xf40e3585, 0x106aa070,
        0x19a4c116, 0x1e376c08, 0x2748774c, 0x34b0bcb5, 0x391c0cb3, 0x4ed8aa4a,
        0x5b9cca4f, 0x682e6ff3, 0x748f82ee, 0x78a5636f, 0x84c87814, 0x8cc70208,
        0x90befffa, 0xa4506ceb, 0xbef9a3f7, 0xc67178f2};
    std::uint32_t w[64];
    for (int i = 0; i < 16; ++i) {
      w[i] = (std::uint32_t(p[4 * i]) << 24) | (std::uint32_t(p[4 * i + 1]) << 16) |
             (std::uint32_t(p[4 * i + 2]) << 8) | std::uint32_t(p[4 * i + 3]);
    }
    for (int i = 16; i < 64; ++i) {
      const std::uint32_t s0 = rotr(w[i - 15], 7) ^ rotr(w[i - 15], 18) ^ (w[i - 15] >> 3);
      const std::uint32_t s1 = rotr(w[i - 2], 17) ^ rotr(w[i - 2], 19) ^ (w[i - 2] >> 10);
      w[i] = w[i - 16] + s0 + w[i - 7] + s1;
    }
    std::uint32_t a = h[0], b = h[1], c = h[2], d = h[3];
    std::uint32_t e = h[4], f = h[5], g = h[6], hh = h[7];
    for (int i = 0; i < 64; ++i) {
      const std::uint32_t s1 = rotr(e, 6) ^ rotr(e, 11) ^ rotr(e, 25);
      const std::uint32_t ch = (e & f) ^ (~e & g);
      const std::uint32_t t1 = hh + s1 + ch + k[i] + w[i];
      const std::uint32_t s0 = rotr(a, 2) ^ rotr(a, 13) ^ rotr(a, 22);
      const std::uint32_t maj = (a & b) ^ (a & c) ^ (b & c);
      const std::uint32_t t2 = s0 + maj;
      hh = g; g = f; f = e; e = d + t1;
      d = c; c = b; b = a; a = t1 + t2;
    }
    h[0] += a; h[1] += b; h[2] += c; h[3] += d;
    h[4] += e; h[5] += f; h[6] += g; h[7] += hh;
  }

  void update(const std::uint8_t* data, std::size_t len) {
    total += len;
    while (len > 0) {
      const std::size_t take = std::min(len, std::size_t(64) - fill);
      std::memcpy(block + fill, data, take);
      fill += take;
      data += take;
      len -= take;
      if (fill == 64) {
        process(block);
        fill = 0;
      }
    }
  }

  std::string finish() {
    const std::uint64_t bits = total * 8;
    const std::uint8_t one = 0x80;
    update(&one, 1);
    const std::uint8_t zero = 0x00;
    while (fill != 56) update(&zero, 1);
    std::uint8_t len_be[8];
    for (int i = 0; i < 8; ++i) len_be[i] = std::uint8_t(bits >> (56 - 8 * i));
    update(len_be, 8);
    static const char* hexd = "0123456789abcdef";
    std::string out(64, '0');
    for (int i = 0; i < 8; ++i) {
      for (int j = 0; j < 4; ++j) {
        const std::uint8_t byte = std::uint8_t(h[i] >> (24 - 8 * j));
        out[8 * i + 2 * j] = hexd[byte >> 4];
        out[8 * i + 2 * j + 1] = hexd[byte & 0xf];
      }
    }
    return out;
  }
};

}  // namespace

std::string sha256_hex(const std::string& bytes) {
  Sha256 s;
  s.update(reinterpret_cast<const std::uint8_t*>(bytes.data()), bytes.size());
  return s.finish();
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw input_error("cannot open file: " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::string& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw input_error("cannot write file: " + path);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

bool file_exists(const std::string& path) {
  std::ifstream in(path);
  return in.good();
}

json read_json_file(const std::string& path) {
  try {
    return json::parse(read_file(path));
  } catch (const json::parse_error& e) {
    throw input_error("invalid JSON in " + path + ": " + e.what());
  }
}

void write_json_file(const std::string& path, const json& j) {
  write_file(path, j.dump(2) + "\n");
}

json RunManifest::to_json() const {
  json in = json::array();
  for (const auto& [p, h] : inputs) in.push_back({{"path", p}, {"sha256", h}});
  json out = json::array();
  for (const auto& [p, h] : outputs) out.push_back({{"path", p}, {"sha256", h}});
  return json{{"command", command},       {"config", config},
              {"inputs", in},             {"outputs", out},
              {"seed", seed},             {"toolkit_version", toolkit_version},
              {"started_at", started_at}, {"finished_at", finished_at}};
}

std::string iso8601_now() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

void manifest_add_input(RunManifest& m, const std::string& path) {
  m.inputs.emplace_back(path, sha256_hex(read_file(path)));
}

void manifest_add_output(RunManifest& m, const std::string& path) {
  m.outputs.emplace_back(path, sha256_hex(read_file(path)));
}

void write_manifest(const RunManifest& m, const std::string& primary_output) {
  write_json_file(primary_output + ".manifest.json", m.to_json());
}

void verify_artifact(const std::string& path) {
  const std::string manifest_path = path + ".manifest.json";
  if (!file_exists(manifest_path)) return;
  const json m = read_json_file(manifest_path);
  if (!m.contains("outputs")) return;
  const std::string actual = sha256_hex(read_file(path));
  for (const auto& o : m["outputs"]) {
    if (o.value("path", "") == path) {
      const std::string expected = o.value("sha256", "");
      if (!expected.empty() && expected != actual) {
        throw input_error("artifact hash mismatch for " + path +
                          " (expected " + expected + ", got " + actual + ")");
      }
    }
  }
}

}  // namespace prefixguard
