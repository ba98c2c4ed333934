#include "hqnn/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>

#include "hqnn/errors.hpp"
#include "hqnn/version.hpp"

namespace hqnn::train {

using models::Family;
using models::Model;
using models::ModelSpec;
using autodiff::shape_str;

namespace {

constexpr char kMagic[4] = {'H', 'Q', 'N', 'N'};
constexpr const char* kSpecTensor = "__model_spec__";
constexpr double kSpecLayout = 1.0;

void put_u16(std::vector<std::uint8_t>& b, std::uint16_t v) {
    b.push_back(static_cast<std::uint8_t>(v & 0xff));
    b.push_back(static_cast<std::uint8_t>(v >> 8));
}

void put_u32(std::vector<std::uint8_t>& b, std::uint32_t v) {
    for (int i = 0; i < 4; ++i)
        b.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xff));
}

void put_f64(std::vector<std::uint8_t>& b, double v) {
    const std::uint64_t u = std::bit_cast<std::uint64_t>(v);
    for (int i = 0; i < 8; ++i)
        b.push_back(static_cast<std::uint8_t>((u >> (8 * i)) & 0xff));
}

void put_tensor(std::vector<std::uint8_t>& b, const std::string& name,
                const autodiff::Shape& shape,
                const std::vector<double>& data) {
    if (name.size() > 0xffff)
        throw ContractError("tensor name too long for the checkpoint format");
    if (shape.size() > 0xff)
        throw ContractError("tensor rank too large for the checkpoint format");
    put_u16(b, static_cast<std::uint16_t>(name.size()));
    b.insert(b.end(), name.begin(), name.end());
    b.push_back(static_cast<std::uint8_t>(shape.size()));
    for (std::size_t d : shape) put_u32(b, static_cast<std::uint32_t>(d));
    for (double v : data) put_f64(b, v);
}

std::vector<double> encode_spec(const ModelSpec& s) {
    std::vector<double> v(13, 0.0);
    v[0] = kSpecLayout;
    v[1] = static_cast<double>(static_cast<int>(s.family));
    v[2] = s.padding == autodiff::Padding::same ? 1.0 : 0.0;
    v[3] = static_cast<double>(s.conv_channels.size());
    for (std::size_t i = 0; i < s.conv_channels.size() && i < 3; ++i)
        v[4 + i] = static_cast<double>(s.conv_channels[i]);
    v[7] = static_cast<double>(s.vit_patch);
    v[8] = static_cast<double>(s.vit_embed_dim);
    v[9] = static_cast<double>(s.vit_heads);
    v[10] = static_cast<double>(s.input_shape[0]);
    v[11] = static_cast<double>(s.input_shape[1]);
    v[12] = static_cast<double>(s.input_shape[2]);
    return v;
}

ModelSpec decode_spec(const std::vector<double>& v, bool quantum_head) {
    if (v.size() != 13 || v[0] != kSpecLayout)
        throw FormatError("checkpoint model description has layout " +
                          std::to_string(v.empty() ? -1.0 : v[0]) +
                          ", expected 1");
    ModelSpec s;
    const int fam = static_cast<int>(v[1]);
    if (fam < 0 || fam > 3)
        throw FormatError("checkpoint names unknown model family " +
                          std::to_string(fam));
    s.family = static_cast<Family>(fam);
    s.quantum_head = quantum_head;
    s.padding =
        v[2] != 0.0 ? autodiff::Padding::same : autodiff::Padding::valid;
    s.conv_channels.clear();
    const int blocks = static_cast<int>(v[3]);
    for (int i = 0; i < blocks && i < 3; ++i)
        s.conv_channels.push_back(static_cast<std::size_t>(v[4 + i]));
    s.vit_patch = static_cast<std::size_t>(v[7]);
    s.vit_embed_dim = static_cast<std::size_t>(v[8]);
    s.vit_heads = static_cast<std::size_t>(v[9]);
    s.input_shape = {static_cast<std::size_t>(v[10]),
                     static_cast<std::size_t>(v[11]),
                     static_cast<std::size_t>(v[12])};
    return s;
}

class Reader {
  public:
    explicit Reader(std::vector<std::uint8_t> bytes, std::string origin)
        : bytes_(std::move(bytes)), origin_(std::move(origin)) {}

    std::size_t offset() const { return pos_; }

    const std::uint8_t* take(std::size_t n, const char* what) {
        if (pos_ + n > bytes_.size())
            throw FormatError(origin_ + ": truncated while reading " + what +
                              " at offset " + std::to_string(pos_));
        const std::uint8_t* p = bytes_.data() + pos_;
        pos_ += n;
        return p;
    }

    std::uint8_t u8(const char* what) { return *take(1, what); }

    std::uint16_t u16(const char* what) {
        const std::uint8_t* p = take(2, what);
        return static_cast<std::uint16_t>(p[0] | (p[1] << 8));
    }

    std::uint32_t u32(const char* what) {
        const std::uint8_t* p = take(4, what);
        return static_cast<std::uint32_t>(p[0]) |
               (static_cast<std::uint32_t>(p[1]) << 8) |
               (static_cast<std::uint32_t>(p[2]) << 16) |
               (static_cast<std::uint32_t>(p[3]) << 24);
    }

    double f64(const char* what) {
        const std::uint8_t* p = take(8, what);
        std::uint64_t u = 0;
        for (int i = 7; i >= 0; --i) u = (u << 8) | p[i];
        return std::bit_cast<double>(u);
    }

    bool done() const { return pos_ == bytes_.size(); }

    const std::string& origin() const { return origin_; }

  private:
    std::vector<std::uint8_t> bytes_;
    std::string origin_;
    std::size_t pos_ = 0;
};

struct RawTensor {
    std::string name;
    autodiff::Shape shape;
    std::vector<double> data;
};

RawTensor read_tensor(Reader& r) {
    RawTensor t;
    const std::uint16_t name_len = r.u16("tensor name length");
    const std::uint8_t* name = r.take(name_len, "tensor name");
    t.name.assign(reinterpret_cast<const char*>(name), name_len);
    const std::uint8_t rank = r.u8("tensor rank");
    std::size_t numel = 1;
    for (std::uint8_t i = 0; i < rank; ++i) {
        const std::uint32_t d = r.u32("tensor dim");
        t.shape.push_back(d);
        numel *= d;
    }
    t.data.resize(numel);
    for (std::size_t i = 0; i < numel; ++i)
        t.data[i] = r.f64("tensor payload");
    return t;
}

} // namespace

void save_checkpoint(const Model& model, const std::filesystem::path& path) {
    std::vector<std::uint8_t> b;
    b.insert(b.end(), kMagic, kMagic + 4);
    put_u32(b, kCheckpointVersion);
    b.push_back(model.spec.quantum_head ? 1 : 0);
    put_u32(b, static_cast<std::uint32_t>(model.params.size() + 1));
    const std::vector<double> spec = encode_spec(model.spec);
    put_tensor(b, kSpecTensor, {spec.size()}, spec);
    for (std::size_t i = 0; i < model.params.size(); ++i)
        put_tensor(b, model.param_names[i], model.params[i].shape(),
                   model.params[i].data_vec());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out)
        throw FormatError("cannot open " + path.string() + " for writing");
    out.write(reinterpret_cast<const char*>(b.data()),
              static_cast<std::streamsize>(b.size()));
    if (!out)
        throw FormatError("failed writing checkpoint " + path.string());
}

Model load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw FormatError("cannot open checkpoint " + path.string());
    std::vector<std::uint8_t> bytes(
        (std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    Reader r(std::move(bytes), path.string());

    const std::uint8_t* magic = r.take(4, "magic");
    if (std::memcmp(magic, kMagic, 4) != 0)
        throw FormatError(path.string() +
                          ": bad magic at offset 0 (not a checkpoint)");
    const std::uint32_t version = r.u32("format version");
    if (version != kCheckpointVersion)
        throw FormatError(path.string() + ": format version " +
                          std::to_string(version) + " at offset 4, expected " +
                          std::to_string(kCheckpointVersion));
    const std::uint8_t head = r.u8("head type");
    if (head > 1)
        throw FormatError(path.string() + ": head-type byte " +
                          std::to_string(head) + " at offset 8 must be 0 or 1");
    const std::uint32_t count = r.u32("tensor count");
    if (count < 1)
        throw FormatError(path.string() + ": empty tensor table at offset 9");

    RawTensor spec_tensor = read_tensor(r);
    if (spec_tensor.name != kSpecTensor)
        throw FormatError(path.string() + ": first tensor is '" +
                          spec_tensor.name + "', expected " + kSpecTensor);
    const ModelSpec spec = decode_spec(spec_tensor.data, head == 1);
    Model model = models::build_model(spec, 0);
    if (model.params.size() != count - 1)
        throw FormatError(path.string() + ": " + std::to_string(count - 1) +
                          " parameter tensors for a model that has " +
                          std::to_string(model.params.size()));
    for (std::uint32_t i = 1; i < count; ++i) {
        const std::size_t at = r.offset();
        RawTensor t = read_tensor(r);
        bool found = false;
        for (std::size_t j = 0; j < model.params.size(); ++j) {
            if (model.param_names[j] != t.name) continue;
            if (model.params[j].shape() != t.shape)
                throw FormatError(path.string() + ": tensor '" + t.name +
                                  "' at offset " + std::to_string(at) +
                                  " has shape " + shape_str(t.shape) +
                                  ", expected " +
                                  shape_str(model.params[j].shape()));
            model.params[j].data_vec() = std::move(t.data);
            found = true;
            break;
        }
        if (!found)
            throw FormatError(path.string() + ": unknown tensor '" + t.name +
                              "' at offset " + std::to_string(at));
    }
    if (!r.done())
        throw FormatError(path.string() + ": " +
                          std::to_string(r.offset()) +
                          " bytes consumed but trailing data remains");
    return model;
}

} // namespace hqnn::train
