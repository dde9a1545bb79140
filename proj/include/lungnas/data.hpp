#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "lungnas/rng.hpp"
#include "lungnas/tensor.hpp"

namespace lungnas {

enum class NoduleClass : int { Benign = 0, Malignant = 1 };

/// Generator settings. Lengths are in voxels of a 32^3 grid and scale with `size`.
struct NoduleParams {
    int size = 32;
    double radius_min = 4.0;  // benign semi-axes
    double radius_max = 7.5;
    int lobes_min = 3;
    int lobes_max = 6;
    double lobe_radius_min = 2.5;
    double lobe_radius_max = 4.5;
    double lobe_offset = 3.5;  // lobe centres sit this far from the nodule centre
    double core_radius = 1.8;
    double core_offset = 2.5;
    double body_min = 0.45;
    double body_max = 0.7;
    double core_intensity = 0.95;
    double background = 0.05;
    double edge_sharpness = 6.0;
    double noise = 0.04;
    int center_jitter = 2;  // integer voxel shift of the nodule centre

    void validate() const;
    friend bool operator==(const NoduleParams&, const NoduleParams&) = default;
};

struct Ellipsoid {
    std::array<double, 3> center;
    std::array<double, 3> radii;
};

/// Geometry drawn for a sample before rendering.
struct NoduleGeometry {
    std::vector<Ellipsoid> lobes;  // one for benign
    std::optional<Ellipsoid> core;
    double body = 0.0;
};

struct VolumeSample {
    std::array<std::uint32_t, 3> extents{32, 32, 32};
    std::vector<float> voxels;  // row-major, z slowest
    int label = 0;
    std::string id;
    std::uint64_t seed = 0;

    std::size_t voxel_count() const { return std::size_t{extents[0]} * extents[1] * extents[2]; }
};

/// Throws std::invalid_argument for degenerate parameters.
NoduleGeometry describe_nodule(std::uint64_t seed, NoduleClass cls, const NoduleParams& params = {});
VolumeSample generate_nodule(std::uint64_t seed, NoduleClass cls, const NoduleParams& params = {});

inline constexpr char kVolumeTag[] = "NLV1";

std::vector<char> encode_volume(const VolumeSample& sample);
/// Throws FormatError on bad magic, truncation, trailing bytes or extents
/// other than `expected`.
VolumeSample decode_volume(std::span<const char> bytes, const std::array<std::uint32_t, 3>& expected = {32, 32, 32},
                           const std::string& what = "volume");
void write_volume(const VolumeSample& sample, const std::filesystem::path& path);
VolumeSample read_volume(const std::filesystem::path& path, const std::array<std::uint32_t, 3>& expected = {32, 32, 32});

struct ManifestEntry {
    std::string id;
    std::string path;  // relative to the manifest's directory
    int label = 0;
    std::uint64_t seed = 0;
    int fold = -1;  // -1 until folds are assigned
};

struct DatasetManifest {
    std::string version = "NLM1";
    NoduleParams params;
    std::uint64_t root_seed = 0;
    int folds = 0;
    std::uint64_t fold_seed = 0;
    std::vector<ManifestEntry> entries;

    std::string to_text() const;
    /// Throws FormatError with a line number on malformed input.
    static DatasetManifest from_text(const std::string& text);
    void save(const std::filesystem::path& path) const;
    static DatasetManifest load(const std::filesystem::path& path);

    std::vector<std::size_t> indices_in_folds(std::span<const int> folds) const;
    std::vector<std::size_t> indices_outside_folds(std::span<const int> folds) const;
};

/// Stratified k-fold assignment: per class, fold sizes differ by at most one.
/// Throws std::invalid_argument if k < 2 or there are fewer samples than k.
DatasetManifest make_folds(DatasetManifest manifest, int k, std::uint64_t seed);

/// Writes `n` volumes (alternating classes) under `dir`/volumes and a manifest
/// at `dir`/manifest, with 10 stratified folds.
DatasetManifest generate_dataset(const std::filesystem::path& dir, int n, std::uint64_t seed,
                                 const NoduleParams& params = {}, int folds = 10);

/// Loads every volume listed in the manifest.
std::vector<VolumeSample> load_samples(const DatasetManifest& manifest, const std::filesystem::path& manifest_dir);

/// Crop offsets (0..2*pad, pad = centre) and per-axis flips.
struct AugmentPlan {
    std::array<int, 3> offset{2, 2, 2};
    std::array<bool, 3> flip{false, false, false};
};

inline constexpr int kAugmentPad = 2;

AugmentPlan draw_augment(Rng& rng);
/// Zero-pads by 2 voxels per side, crops back to the original extents at
/// `plan.offset`, then flips the requested axes. Result has shape (D, H, W).
Tensor apply_augment(const VolumeSample& sample, const AugmentPlan& plan);
Tensor augment(const VolumeSample& sample, Rng& rng);

/// Stacks volumes into a (B, 1, D, H, W) batch.
Tensor stack_volumes(std::span<const VolumeSample* const> samples);
Tensor volume_tensor(const VolumeSample& sample);

}  // namespace lungnas
