#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "json.hpp"

namespace prefixguard {

using json = nlohmann::json;

// SHA-256 over a byte string, hex-encoded. Used for sample-pack ordering,
// vectorizer/model identity, and artifact manifests.
std::string sha256_hex(const std::string& bytes);

std::string read_file(const std::string& path);
void write_file(const std::string& path, const std::string& bytes);
bool file_exists(const std::string& path);

json read_json_file(const std::string& path);
void write_json_file(const std::string& path, const json& j);

// Every CLI command records what it ran on and what it produced. The
// manifest sits next to the primary output as <output>.manifest.json.
// Timestamps are the only fields allowed to differ between identical runs.
struct RunManifest {
  std::string command;
  json config;
  std::vector<std::pair<std::string, std::string>> inputs;   // path, sha256
  std::vector<std::pair<std::string, std::string>> outputs;  // path, sha256
  std::uint64_t seed = 0;
  std::string toolkit_version;
  std::string started_at;
  std::string finished_at;

  json to_json() const;
};

std::string iso8601_now();

// Hashes `path` and appends it to the manifest input list.
void manifest_add_input(RunManifest& m, const std::string& path);
void manifest_add_output(RunManifest& m, const std::string& path);
void write_manifest(const RunManifest& m, const std::string& primary_output);

// If <path>.manifest.json exists, recomputes the artifact hash and throws
// input_error on mismatch. Inputs without a manifest pass through.
void verify_artifact(const std::string& path);

}  // namespace prefixguard
