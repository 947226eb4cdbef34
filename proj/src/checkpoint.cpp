#include "ewclab/checkpoint.hpp"

#include <bit>
#include <cstring>

#include "json.hpp"

#include "ewclab/config.hpp"
#include "ewclab/error.hpp"
#include "ewclab/report.hpp"

namespace ewclab {
namespace {

using nlohmann::json;

void put_le(std::string& out, double v) {
    auto u = std::bit_cast<std::uint64_t>(v);
    for (int i = 0; i < 8; ++i) {
        out.push_back(static_cast<char>(u & 0xffu));
        u >>= 8;
    }
}

double get_le(const char* p) {
    std::uint64_t u = 0;
    for (int i = 7; i >= 0; --i) u = (u << 8) | static_cast<unsigned char>(p[i]);
    return std::bit_cast<double>(u);
}

[[noreturn]] void corrupt(const std::string& what) { fail(ErrorKind::Io, "corrupt container: " + what); }

// Layout of build_model(config) without generating random values.
std::vector<NamedTensor> layout_of(const ModelConfig& config) {
    auto p = build_model(config);
    return std::move(p.entries);
}

CheckpointContainer from_params(const ModelParams& params) {
    CheckpointContainer c;
    c.model_config = params.config;
    c.tensors.reserve(params.entries.size());
    for (const auto& e : params.entries) c.tensors.push_back({e.name, Tensor(e.tensor.shape, e.tensor.data)});
    return c;
}

void check_layout(const CheckpointContainer& c) {
    const auto expected = layout_of(c.model_config);
    if (expected.size() != c.tensors.size())
        corrupt("expected " + std::to_string(expected.size()) + " tensors, found " + std::to_string(c.tensors.size()));
    for (std::size_t i = 0; i < expected.size(); ++i) {
        if (expected[i].name != c.tensors[i].name || expected[i].tensor.shape != c.tensors[i].tensor.shape)
            corrupt("tensor " + std::to_string(i) + " is " + c.tensors[i].name + shape_str(c.tensors[i].tensor.shape) +
                    ", expected " + expected[i].name + shape_str(expected[i].tensor.shape));
    }
}

} // namespace

std::vector<ManifestEntry> CheckpointContainer::manifest() const {
    std::vector<ManifestEntry> out;
    std::uint64_t offset = 0;
    for (const auto& t : tensors) {
        const std::uint64_t len = 8 * static_cast<std::uint64_t>(t.tensor.data.size());
        out.push_back({t.name, t.tensor.shape, offset, len});
        offset += len;
    }
    return out;
}

std::string encode_container(const CheckpointContainer& c) {
    for (const auto& t : c.tensors)
        if (numel(t.tensor.shape) != t.tensor.data.size()) fail(ErrorKind::InvalidShape, "tensor " + t.name + " size mismatch");
    json manifest = json::array();
    for (const auto& m : c.manifest())
        manifest.push_back({{"name", m.name}, {"shape", m.shape}, {"byte_offset", m.byte_offset}, {"byte_length", m.byte_length}});
    json header = {{"format_version", c.format_version}, {"model_config", to_json(c.model_config)}, {"tensors", manifest}};
    if (c.fisher) header["fisher"] = {{"task_label", c.fisher->task_label}, {"n_samples", c.fisher->n_samples}};

    std::string out = header.dump();
    out.push_back('\n');
    for (const auto& t : c.tensors)
        for (double v : t.tensor.data) put_le(out, v);
    return out;
}

CheckpointContainer decode_container(std::string_view bytes) {
    const auto nl = bytes.find('\n');
    if (nl == std::string_view::npos) corrupt("missing header terminator");
    json header;
    try {
        header = json::parse(bytes.substr(0, nl));
    } catch (const json::exception& e) {
        corrupt(std::string("header is not JSON: ") + e.what());
    }
    const std::string_view payload = bytes.substr(nl + 1);

    CheckpointContainer c;
    try {
        c.format_version = header.at("format_version").get<int>();
        if (c.format_version != kCheckpointFormatVersion)
            corrupt("unsupported format_version " + std::to_string(c.format_version));
        c.model_config = model_config_from_json(header.at("model_config"));
        std::uint64_t expected_offset = 0;
        for (const auto& m : header.at("tensors")) {
            const auto name = m.at("name").get<std::string>();
            const auto shape = m.at("shape").get<Shape>();
            const auto off = m.at("byte_offset").get<std::uint64_t>();
            const auto len = m.at("byte_length").get<std::uint64_t>();
            if (off != expected_offset) corrupt("tensor " + name + " offset out of order or overlapping");
            if (shape.empty() || len != 8 * numel(shape)) corrupt("tensor " + name + " byte_length disagrees with shape");
            if (off + len > payload.size()) corrupt("tensor " + name + " runs past the payload");
            std::vector<double> data(numel(shape));
            for (std::size_t i = 0; i < data.size(); ++i) data[i] = get_le(payload.data() + off + 8 * i);
            c.tensors.push_back({name, Tensor(shape, std::move(data))});
            expected_offset = off + len;
        }
        if (expected_offset != payload.size())
            corrupt("payload is " + std::to_string(payload.size()) + " bytes, manifest covers " + std::to_string(expected_offset));
        if (header.contains("fisher")) {
            const auto& f = header.at("fisher");
            c.fisher = FisherMeta{f.at("task_label").get<std::string>(), f.at("n_samples").get<std::size_t>()};
        }
    } catch (const json::exception& e) {
        corrupt(std::string("bad header: ") + e.what());
    }
    return c;
}

void save_container(const CheckpointContainer& c, const std::filesystem::path& path) {
    write_text_file(path, encode_container(c));
}

CheckpointContainer load_container(const std::filesystem::path& path) {
    if (!std::filesystem::exists(path)) fail(ErrorKind::Io, "missing file " + path.string());
    return decode_container(read_text_file(path));
}

void save_checkpoint(const ModelParams& params, const std::filesystem::path& path) {
    save_container(from_params(params), path);
}

ModelParams load_checkpoint(const std::filesystem::path& path) {
    auto c = load_container(path);
    if (c.fisher) fail(ErrorKind::InvalidInput, path.string() + " holds a Fisher vector, not parameters");
    check_layout(c);
    ModelParams p;
    p.config = c.model_config;
    p.entries = std::move(c.tensors);
    return p;
}

void save_fisher(const FisherVector& fisher, const ModelConfig& config, const std::filesystem::path& path) {
    auto c = from_params(build_model(config));
    if (fisher.values.size() != param_count(config))
        fail(ErrorKind::InvalidShape, "fisher has " + std::to_string(fisher.values.size()) + " values, model has " +
                                          std::to_string(param_count(config)));
    std::size_t k = 0;
    for (auto& t : c.tensors)
        for (double& v : t.tensor.data) v = fisher.values[k++];
    c.fisher = FisherMeta{fisher.task_label, fisher.n_samples};
    save_container(c, path);
}

FisherVector load_fisher(const std::filesystem::path& path) {
    auto c = load_container(path);
    if (!c.fisher) fail(ErrorKind::InvalidInput, path.string() + " holds parameters, not a Fisher vector");
    check_layout(c);
    FisherVector f;
    f.task_label = c.fisher->task_label;
    f.n_samples = c.fisher->n_samples;
    for (const auto& t : c.tensors) f.values.insert(f.values.end(), t.tensor.data.begin(), t.tensor.data.end());
    return f;
}

} // namespace ewclab
