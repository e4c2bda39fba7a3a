#pragma once

// Reproducibility sidecar written next to every command's outputs: the
// command, its fully resolved flags, the seed, content hashes of all input
// files, and the list of files produced.  Deliberately contains no
// timestamps or host information, so reruns with identical inputs yield an
// identical manifest.

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

namespace ivp {

struct RunManifest {
    std::string command;
    std::vector<std::pair<std::string, std::string>> flags;   // name -> resolved value
    std::uint64_t seed = 0;
    std::vector<std::pair<std::string, std::string>> inputs;  // path -> content hash
    std::vector<std::string> outputs;
};

// SHA-1 over the blob framing `"blob <size>\0<content>"`, which matches what
// `git hash-object` prints for the same bytes.
std::string blob_hash(const std::string& content);
std::string blob_hash_file(const std::string& path);

// Deterministic JSON serialization (fixed key order, no timestamps).
void write_manifest(const RunManifest& manifest, const std::string& path);

}  // namespace ivp
