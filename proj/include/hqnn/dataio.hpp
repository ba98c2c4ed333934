#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "hqnn/tensor.hpp"

namespace hqnn::dataio {

inline constexpr std::size_t kImageChannels = 3;
inline constexpr std::size_t kImageSize = 64;
inline constexpr int kNumClasses = 10;

/// One image with its class id; pixels are channel-major (3,64,64) in [0,1].
struct Sample {
    autodiff::Tensor pixels;
    int class_id = -1;
    std::string source_path;
};

/// Binary task over two classes; the lower id maps to label 0.
struct PairTask {
    int class_a = 0;
    int class_b = 1;

    double label_of(int class_id) const;
    std::string name() const; // e.g. "3v7"
};

PairTask make_pair(int a, int b);
PairTask pair_from_name(const std::string& name);

/// All C(10,2) = 45 unordered class pairs, (0,1), (0,2), ... (8,9).
std::vector<PairTask> enumerate_all_pairs();

struct LabeledSample {
    Sample sample;
    double label = 0.0;
};

struct SplitDataset {
    std::vector<LabeledSample> train;
    std::vector<LabeledSample> val;
    std::uint64_t split_seed = 0;
};

struct ManifestEntry {
    std::string path; // resolved against the manifest's directory
    int class_id = -1;
};

/// CSV with header `path,label`; labels 0..9. Parse failures cite the
/// offending line number.
std::vector<ManifestEntry> load_manifest(const std::filesystem::path& path);

/// 8-bit RGB PNG, exactly 64x64, scaled to [0,1] channel-major.
autodiff::Tensor decode_image_rgb(const std::filesystem::path& path);

/// Rounds each value to the nearest of the 256 levels and writes RGB PNG.
void encode_image_rgb(const std::filesystem::path& path,
                      const autodiff::Tensor& pixels);

/// Decodes every manifest entry.
std::vector<Sample> load_samples(const std::filesystem::path& manifest);

/// Keeps only the two task classes and attaches labels. Both classes must
/// be present.
std::vector<LabeledSample> build_pair_task(const std::vector<Sample>& samples,
                                           int class_a, int class_b);

/// Stratified split: per class, floor(fraction * n) shuffled samples go to
/// validation. Every class needs at least 5 samples.
SplitDataset split_train_val(const std::vector<LabeledSample>& samples,
                             double fraction, std::uint64_t seed);

/// Two synthetic classes: 0 = horizontal gradient, 1 = checkerboard with
/// 8-pixel cells, both plus N(0, 0.05) noise clamped to [0,1].
std::vector<Sample> gen_synthetic(std::size_t n_per_class, std::uint64_t seed);

} // namespace hqnn::dataio
