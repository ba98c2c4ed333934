#include "hqnn/dataio.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>

#include <png.h>

#include "hqnn/errors.hpp"
#include "hqnn/rng.hpp"

namespace hqnn::dataio {

using autodiff::Tensor;
using autodiff::shape_str;

double PairTask::label_of(int class_id) const {
    if (class_id == class_a) return 0.0;
    if (class_id == class_b) return 1.0;
    throw ContractError("class " + std::to_string(class_id) +
                        " is not part of pair " + name());
}

std::string PairTask::name() const {
    return std::to_string(class_a) + "v" + std::to_string(class_b);
}

PairTask make_pair(int a, int b) {
    if (a == b)
        throw ValidationError("pair classes must differ, got " +
                              std::to_string(a) + " twice");
    if (a > b)
        throw ValidationError("pair classes must be ordered a < b, got " +
                              std::to_string(a) + "," + std::to_string(b));
    if (a < 0 || b >= kNumClasses)
        throw ValidationError("pair classes must lie in 0..9, got " +
                              std::to_string(a) + "," + std::to_string(b));
    return PairTask{a, b};
}

PairTask pair_from_name(const std::string& name) {
    const std::size_t sep = name.find('v');
    if (sep == std::string::npos)
        throw ValidationError("pair '" + name + "' is not of the form AvB");
    try {
        return make_pair(std::stoi(name.substr(0, sep)),
                         std::stoi(name.substr(sep + 1)));
    } catch (const std::invalid_argument&) {
        throw ValidationError("pair '" + name + "' is not of the form AvB");
    }
}

std::vector<PairTask> enumerate_all_pairs() {
    std::vector<PairTask> pairs;
    for (int a = 0; a < kNumClasses; ++a)
        for (int b = a + 1; b < kNumClasses; ++b)
            pairs.push_back(PairTask{a, b});
    return pairs;
}

std::vector<ManifestEntry> load_manifest(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in)
        throw ParseError("cannot open manifest " + path.string());
    std::string line;
    if (!std::getline(in, line))
        throw ParseError("manifest " + path.string() + " is empty");
    // Tolerate a UTF-8 BOM and trailing CR from other platforms.
    if (line.rfind("\xEF\xBB\xBF", 0) == 0) line.erase(0, 3);
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line != "path,label")
        throw ParseError("manifest " + path.string() +
                         " line 1: expected header 'path,label', got '" +
                         line + "'");
    const std::filesystem::path dir = path.parent_path();
    std::vector<ManifestEntry> entries;
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        const std::size_t comma = line.rfind(',');
        if (comma == std::string::npos || comma == 0)
            throw ParseError("manifest " + path.string() + " line " +
                             std::to_string(line_no) +
                             ": expected 'path,label', got '" + line + "'");
        const std::string raw_path = line.substr(0, comma);
        const std::string raw_label = line.substr(comma + 1);
        int label = -1;
        try {
            std::size_t used = 0;
            label = std::stoi(raw_label, &used);
            if (used != raw_label.size()) label = -1;
        } catch (const std::exception&) {
            label = -1;
        }
        if (label < 0 || label >= kNumClasses)
            throw ParseError("manifest " + path.string() + " line " +
                             std::to_string(line_no) + ": label '" + raw_label +
                             "' outside 0..9");
        std::filesystem::path p(raw_path);
        if (p.is_relative()) p = dir / p;
        entries.push_back(ManifestEntry{p.string(), label});
    }
    return entries;
}

Tensor decode_image_rgb(const std::filesystem::path& path) {
    png_image image;
    std::memset(&image, 0, sizeof(image));
    image.version = PNG_IMAGE_VERSION;
    if (!png_image_begin_read_from_file(&image, path.string().c_str()))
        throw FormatError("cannot read PNG " + path.string() + ": " +
                          image.message);
    struct Guard {
        png_image* img;
        ~Guard() { png_image_free(img); }
    } guard{&image};
    if (image.width != kImageSize || image.height != kImageSize)
        throw FormatError("PNG " + path.string() + " is " +
                          std::to_string(image.width) + "x" +
                          std::to_string(image.height) + ", expected 64x64");
    if (image.format != PNG_FORMAT_RGB)
        throw FormatError("PNG " + path.string() +
                          " is not 8-bit RGB (alpha/palette/gray rejected)");
    std::vector<png_byte> buffer(PNG_IMAGE_SIZE(image));
    if (!png_image_finish_read(&image, nullptr, buffer.data(), 0, nullptr))
        throw FormatError("cannot decode PNG " + path.string() + ": " +
                          image.message);
    Tensor t = Tensor::zeros({kImageChannels, kImageSize, kImageSize});
    double* out = t.data();
    for (std::size_t i = 0; i < kImageSize; ++i)
        for (std::size_t j = 0; j < kImageSize; ++j)
            for (std::size_t c = 0; c < kImageChannels; ++c)
                out[(c * kImageSize + i) * kImageSize + j] =
                    buffer[(i * kImageSize + j) * 3 + c] / 255.0;
    return t;
}

void encode_image_rgb(const std::filesystem::path& path,
                      const autodiff::Tensor& pixels) {
    if (pixels.shape() !=
        autodiff::Shape{kImageChannels, kImageSize, kImageSize})
        throw ShapeError("encode_image_rgb: expected (3,64,64), got " +
                         shape_str(pixels.shape()));
    std::vector<png_byte> buffer(kImageSize * kImageSize * 3);
    const double* in = pixels.data();
    for (std::size_t i = 0; i < kImageSize; ++i)
        for (std::size_t j = 0; j < kImageSize; ++j)
            for (std::size_t c = 0; c < kImageChannels; ++c) {
                const double v =
                    in[(c * kImageSize + i) * kImageSize + j] * 255.0;
                const long q = std::lround(std::min(std::max(v, 0.0), 255.0));
                buffer[(i * kImageSize + j) * 3 + c] =
                    static_cast<png_byte>(q);
            }
    png_image image;
    std::memset(&image, 0, sizeof(image));
    image.version = PNG_IMAGE_VERSION;
    image.width = kImageSize;
    image.height = kImageSize;
    image.format = PNG_FORMAT_RGB;
    if (!png_image_write_to_file(&image, path.string().c_str(), 0,
                                 buffer.data(), 0, nullptr)) {
        const std::string msg = image.message;
        png_image_free(&image);
        throw FormatError("cannot write PNG " + path.string() + ": " + msg);
    }
}

std::vector<Sample> load_samples(const std::filesystem::path& manifest) {
    std::vector<Sample> samples;
    for (const ManifestEntry& e : load_manifest(manifest))
        samples.push_back(Sample{decode_image_rgb(e.path), e.class_id, e.path});
    return samples;
}

std::vector<LabeledSample> build_pair_task(const std::vector<Sample>& samples,
                                           int class_a, int class_b) {
    const PairTask pair = make_pair(class_a, class_b);
    std::vector<LabeledSample> out;
    bool seen_a = false, seen_b = false;
    for (const Sample& s : samples) {
        if (s.class_id != class_a && s.class_id != class_b) continue;
        seen_a = seen_a || s.class_id == class_a;
        seen_b = seen_b || s.class_id == class_b;
        out.push_back(LabeledSample{s, pair.label_of(s.class_id)});
    }
    if (!seen_a || !seen_b)
        throw ValidationError("pair " + pair.name() + ": class " +
                              std::to_string(seen_a ? class_b : class_a) +
                              " has no samples");
    return out;
}

SplitDataset split_train_val(const std::vector<LabeledSample>& samples,
                             double fraction, std::uint64_t seed) {
    if (!(fraction >= 0.0 && fraction < 1.0))
        throw ValidationError("split fraction must lie in [0,1), got " +
                              std::to_string(fraction));
    std::map<int, std::vector<std::size_t>> by_class;
    for (std::size_t i = 0; i < samples.size(); ++i)
        by_class[samples[i].sample.class_id].push_back(i);
    if (by_class.empty())
        throw ValidationError("cannot split an empty sample list");
    for (const auto& [cls, idx] : by_class)
        if (idx.size() < 5)
            throw ValidationError("class " + std::to_string(cls) + " has " +
                                  std::to_string(idx.size()) +
                                  " samples, need at least 5 to split");
    SplitDataset out;
    out.split_seed = seed;
    Rng rng(seed);
    for (auto& [cls, idx] : by_class) {
        rng.shuffle(idx);
        const std::size_t n_val =
            static_cast<std::size_t>(fraction * static_cast<double>(idx.size()));
        for (std::size_t i = 0; i < idx.size(); ++i)
            (i < n_val ? out.val : out.train).push_back(samples[idx[i]]);
    }
    return out;
}

std::vector<Sample> gen_synthetic(std::size_t n_per_class, std::uint64_t seed) {
    if (n_per_class < 10)
        throw ValidationError("synthetic set needs n_per_class >= 10, got " +
                              std::to_string(n_per_class));
    Rng rng(seed);
    std::vector<Sample> samples;
    samples.reserve(2 * n_per_class);
    constexpr double kNoise = 0.05;
    constexpr std::size_t kCell = 8;
    for (int cls = 0; cls <= 1; ++cls) {
        for (std::size_t s = 0; s < n_per_class; ++s) {
            Tensor t =
                Tensor::zeros({kImageChannels, kImageSize, kImageSize});
            double* p = t.data();
            for (std::size_t c = 0; c < kImageChannels; ++c)
                for (std::size_t i = 0; i < kImageSize; ++i)
                    for (std::size_t j = 0; j < kImageSize; ++j) {
                        const double base =
                            cls == 0
                                ? static_cast<double>(j) / (kImageSize - 1)
                                : static_cast<double>(
                                      (i / kCell + j / kCell) % 2);
                        const double v = base + rng.normal(0.0, kNoise);
                        p[(c * kImageSize + i) * kImageSize + j] =
                            std::min(std::max(v, 0.0), 1.0);
                    }
            char name[64];
            std::snprintf(name, sizeof(name), "synthetic/%d/%04zu.png", cls,
                          s);
            samples.push_back(Sample{t, cls, name});
        }
    }
    return samples;
}

} // namespace hqnn::dataio
