#pragma once

// Run manifest written next to every artifact-producing command's outputs.
// Captures the resolved configuration so a run can be replayed byte-exactly.

#include <string>
#include <vector>

namespace countnet {

constexpr const char* kToolName = "countnet";
constexpr const char* kToolVersion = "0.1.0";

struct RunManifest {
  std::string tool = kToolName;
  std::string version = kToolVersion;
  std::string command;      // CLI subcommand
  std::string config_text;  // resolved flat key=value option text
  std::string start_time;   // ISO 8601 UTC
  std::string end_time;
  std::vector<std::string> outputs;  // artifact paths relative to the manifest
};

void write_manifest(const std::string& path, const RunManifest& m);
RunManifest read_manifest(const std::string& path);

std::string iso8601_utc_now();

}  // namespace countnet
