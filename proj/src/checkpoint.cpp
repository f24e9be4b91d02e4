#include "daobs/checkpoint.hpp"

#include <fstream>
#include <istream>
#include <ostream>
#include <string>

#include <json.hpp>

#include "daobs/dataset_io.hpp"
#include "daobs/errors.hpp"

namespace daobs {

namespace {

constexpr const char* kMagic = "daobs-checkpoint";

nlohmann::json layer_json(const LayerSpec& l) {
    nlohmann::json j{{"kind", to_string(l.kind)}};
    switch (l.kind) {
        case LayerKind::Conv:
            j["in_channels"] = l.in_channels;
            j["out_channels"] = l.out_channels;
            j["kernel"] = l.kernel;
            j["stride"] = l.stride;
            break;
        case LayerKind::MaxPool:
            j["window"] = l.window;
            break;
        case LayerKind::Dense:
            j["in_features"] = l.in_features;
            j["out_features"] = l.out_features;
            break;
        case LayerKind::LeakyRelu:
            j["slope"] = l.slope;
            break;
        case LayerKind::Sigmoid:
            break;
    }
    return j;
}

LayerSpec layer_from_json(const nlohmann::json& j) {
    LayerSpec l;
    l.kind = layer_kind_from_string(j.at("kind").get<std::string>());
    l.in_channels = j.value("in_channels", 0);
    l.out_channels = j.value("out_channels", 0);
    l.kernel = j.value("kernel", 0);
    l.stride = j.value("stride", 1);
    l.window = j.value("window", 0);
    l.in_features = j.value("in_features", 0);
    l.out_features = j.value("out_features", 0);
    l.slope = j.value("slope", 0.2);
    return l;
}

}  // namespace

void write_checkpoint(std::ostream& out, const ObserverParams& p) {
    nlohmann::json header;
    header["version"] = kCheckpointVersion;
    header["role"] = to_string(p.arch.role);
    header["input_shape"] = {p.arch.input.channels, p.arch.input.height, p.arch.input.width};
    header["layers"] = nlohmann::json::array();
    for (const LayerSpec& l : p.arch.layers) header["layers"].push_back(layer_json(l));
    header["input_transform"] = {{"offset", p.input.offset}, {"scale", p.input.scale}};
    header["lineage"] = p.lineage;
    header["param_count"] = p.weights.size();
    out << kMagic << '\n' << header.dump() << '\n';
    write_f32_le(out, p.weights);
    if (!out) throw IoError("checkpoint write failed");
}

ObserverParams read_checkpoint(std::istream& in) {
    std::string magic;
    std::string line;
    if (!std::getline(in, magic) || magic != kMagic) throw IoError("not a checkpoint (bad magic line)");
    if (!std::getline(in, line)) throw IoError("checkpoint header missing");
    nlohmann::json header;
    try {
        header = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
        throw IoError(std::string("malformed checkpoint header: ") + e.what());
    }
    if (header.value("version", 0) != kCheckpointVersion) throw IoError("unsupported checkpoint version");

    ObserverParams p;
    p.arch.role = role_from_string(header.at("role").get<std::string>());
    const auto shape = header.at("input_shape");
    p.arch.input = {shape.at(0).get<int>(), shape.at(1).get<int>(), shape.at(2).get<int>()};
    for (const auto& lj : header.at("layers")) p.arch.layers.push_back(layer_from_json(lj));
    p.arch.validate();
    p.input.offset = header.at("input_transform").at("offset").get<float>();
    p.input.scale = header.at("input_transform").at("scale").get<float>();
    p.lineage = header.value("lineage", "");
    const auto count = header.at("param_count").get<std::size_t>();
    if (count != p.arch.param_count()) throw IoError("checkpoint parameter count does not match its architecture");
    p.weights.resize(count);
    read_f32_le(in, p.weights);
    return p;
}

void save_checkpoint(const ObserverParams& p, const std::filesystem::path& file) {
    if (file.has_parent_path()) std::filesystem::create_directories(file.parent_path());
    std::ofstream out(file, std::ios::binary);
    if (!out) throw IoError("cannot write " + file.string());
    write_checkpoint(out, p);
}

ObserverParams load_checkpoint(const std::filesystem::path& file) {
    std::ifstream in(file, std::ios::binary);
    if (!in) throw IoError("missing checkpoint " + file.string());
    return read_checkpoint(in);
}

}  // namespace daobs
