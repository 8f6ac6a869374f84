#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "simcl/augment.hpp"

namespace simcl {

// Frozen augmentation corpus: every preset applied to procedurally generated
// inputs under fixed seeds. The committed files pin the pipeline's exact
// arithmetic; any drift in sampling order or math shows up as a byte diff.
struct GoldenCase {
  std::string name;
  std::string preset;
  std::uint64_t seed = 0;
  int height = 0;
  int width = 0;
};

const std::vector<GoldenCase>& golden_cases();

// Deterministic input image for a case (pure function of seed and extents).
Image golden_input(const GoldenCase& c);

// Both views of the case's view pair, concatenated (x1 then x2).
std::vector<float> golden_payload(const GoldenCase& c);

// Writes <case>.f32 files plus manifest.json into `dir`.
void write_golden_corpus(const std::filesystem::path& dir);

// Recomputes every case and byte-compares against the files in `dir`.
// Returns the names of mismatched cases; missing files throw.
std::vector<std::string> check_golden_corpus(const std::filesystem::path& dir);

}  // namespace simcl
