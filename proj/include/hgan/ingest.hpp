#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "hgan/tensor.hpp"

namespace hgan {

// --- feature blob format -------------------------------------------------
//
// magic "HGT1" | u8 rank | rank x u32 LE dims | f32 LE row-major payload
//
// "HGT8" is the same layout with an f64 payload; it is used for checkpoints,
// where parameter round-trips must be exact, and never for feature files.

Tensor read_blob(const std::filesystem::path& path);
void write_blob(const std::filesystem::path& path, const Tensor& t);

Tensor read_blob64(const std::filesystem::path& path);
void write_blob64(const std::filesystem::path& path, const Tensor& t);

// stream variants used by the checkpoint container
Tensor read_blob64(std::istream& in, const std::string& context);
void write_blob64(std::ostream& out, const Tensor& t);

// --- dataset manifest ------------------------------------------------------

/// One (image, caption) pair; samples in the same caption group share the
/// image blobs.
struct ManifestSample {
    std::string sample_id;
    std::string caption_group_id;
    std::string global_path;   // G: m x D0
    std::string regions_path;  // L: k x D0
    std::string tokens_path;   // S: l x D1
};

struct DatasetManifest {
    std::string name;
    std::size_t d0 = 0;
    std::size_t d1 = 0;
    std::size_t group_size = 5;
    std::string split = "train";
    std::vector<ManifestSample> samples;
    // optional: evaluation folds as lists of caption_group_ids
    std::vector<std::vector<std::string>> folds;
};

DatasetManifest read_manifest(const std::filesystem::path& path);
void write_manifest(const std::filesystem::path& path, const DatasetManifest& m);

// --- loaded dataset --------------------------------------------------------

struct LoadedSample {
    std::string sample_id;
    std::string caption_group_id;
    Tensor global;   // m x D0
    Tensor regions;  // k x D0
    Tensor tokens;   // l x D1
};

struct Dataset {
    DatasetManifest manifest;
    std::vector<LoadedSample> samples;                 // caption-level, manifest order
    std::vector<std::string> group_ids;                // unique groups, first-appearance order
    std::vector<std::size_t> sample_group;             // sample index -> group index
    std::vector<std::size_t> group_representative;     // group index -> a sample index
    std::map<std::string, std::vector<std::size_t>> group_samples;
};

/// Reads every referenced blob (cached by path), checks dims against the
/// manifest, and checks that caption groups have exactly `group_size` members.
Dataset load_dataset(const std::filesystem::path& manifest_path);

// --- synthetic generator ---------------------------------------------------

/// Every group draws one latent concept vector; its image grid/region rows and
/// all of its caption token rows are noisy affine images of that latent, so
/// retrieval on the result is learnable to R@1 = 100%.
struct SyntheticConfig {
    std::size_t n_groups = 32;
    std::size_t m = 4;   // image grid rows
    std::size_t k = 4;   // region rows
    std::size_t l = 6;   // token rows
    std::size_t d0 = 16;
    std::size_t d1 = 12;
    std::size_t latent_dim = 8;
    std::size_t group_size = 5;  // captions per image
    double noise = 0.05;
    std::uint64_t seed = 7;
    std::string name = "synthetic";
    std::string split = "train";
};

DatasetManifest generate_synthetic(const SyntheticConfig& cfg,
                                   const std::filesystem::path& out_dir);

} // namespace hgan
