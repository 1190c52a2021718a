#pragma once

#include <string>
#include <vector>

#include "classkit/tensor.hpp"

namespace classkit {

struct SampleMeta {
  std::string kind;  // ellipse | polygon | twotone
  int64_t distractors = 0;
  double contrast = 0.0;  // object-vs-background luma gap, in [0,1]
};

struct SaliencySample {
  std::string id;
  Tensor image;  // [3,H,W] in [0,1]
  Tensor mask;   // [1,H,W] in {0,1}
  SampleMeta meta;
};

struct ManifestEntry {
  std::string id;
  std::string image_path;  // relative to root
  std::string mask_path;
};

struct DatasetManifest {
  std::string root;
  std::string split;
  uint64_t seed = 0;
  std::vector<ManifestEntry> entries;
};

// 8-bit binary netpbm. Values quantize as round(v*255), clamped; reads map
// bytes back to v/255. Parse failures report the byte offset.
void write_ppm(const std::string& path, const Tensor& image);  // [3,H,W]
void write_pgm(const std::string& path, const Tensor& map);    // [H,W] or [1,H,W]
Tensor read_ppm(const std::string& path);                      // [3,H,W]
Tensor read_pgm(const std::string& path);                      // [1,H,W]

// One textured scene, deterministic from (seed, index): a centered salient
// shape (30% ellipse, 30% polygon, 40% two-tone), plus up to three high
// contrast distractor shapes that the mask excludes. All geometry and color
// arithmetic is integral, so files are identical across platforms.
SaliencySample generate_sample(uint64_t seed, int64_t index, int64_t size);

// Writes images/, masks/, manifest.tsv, and meta.tsv under dir.
DatasetManifest generate_dataset(uint64_t seed, int64_t count, int64_t size,
                                 const std::string& dir,
                                 const std::string& split);

DatasetManifest read_manifest(const std::string& path);

// Samples follow manifest order; masks binarize at byte >= 128. Errors name
// the offending sample id.
std::vector<SaliencySample> load_dataset(const DatasetManifest& m);

}  // namespace classkit
