#include "daobs/dataset_io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>

#include "daobs/errors.hpp"
#include "daobs/serialization.hpp"

namespace daobs {

namespace {

std::uint32_t byteswap32(std::uint32_t v) {
    return (v >> 24) | ((v >> 8) & 0xff00u) | ((v << 8) & 0xff0000u) | (v << 24);
}

}  // namespace

void write_f32_le(std::ostream& out, std::span<const float> values) {
    if constexpr (std::endian::native == std::endian::little) {
        out.write(reinterpret_cast<const char*>(values.data()),
                  static_cast<std::streamsize>(values.size() * sizeof(float)));
    } else {
        for (float v : values) {
            std::uint32_t bits = byteswap32(std::bit_cast<std::uint32_t>(v));
            out.write(reinterpret_cast<const char*>(&bits), sizeof bits);
        }
    }
}

void read_f32_le(std::istream& in, std::span<float> values) {
    in.read(reinterpret_cast<char*>(values.data()), static_cast<std::streamsize>(values.size() * sizeof(float)));
    if (!in) throw IoError("truncated float32 payload");
    if constexpr (std::endian::native != std::endian::little) {
        for (float& v : values) v = std::bit_cast<float>(byteswap32(std::bit_cast<std::uint32_t>(v)));
    }
}

void save_dataset(const Dataset& ds, const std::filesystem::path& dir) {
    check_pairing(ds);
    std::filesystem::create_directories(dir);
    const GridSpec& grid = ds.meta.config.grid;

    nlohmann::json meta = ds.meta;
    meta["layout_version"] = kDatasetLayoutVersion;
    meta["n_samples"] = ds.samples.size();
    meta["shape"] = {ds.samples.size(), grid.height, grid.width};
    meta["dtype"] = "float32-le";
    {
        std::ofstream out(dir / "meta.json");
        if (!out) throw IoError("cannot write " + (dir / "meta.json").string());
        out << meta.dump(2) << '\n';
    }

    std::ofstream images(dir / "images.f32", std::ios::binary);
    std::ofstream labels(dir / "labels.u8", std::ios::binary);
    if (!images || !labels) throw IoError("cannot write dataset payload in " + dir.string());
    for (const ImageSample& s : ds.samples) {
        if (s.pixels.size() != grid.pixel_count()) throw InputError("sample size does not match grid");
        write_f32_le(images, s.pixels);
        labels.put(static_cast<char>(s.label));
    }
    if (!images || !labels) throw IoError("write failed in " + dir.string());
}

Dataset load_dataset(const std::filesystem::path& dir) {
    std::ifstream meta_in(dir / "meta.json");
    if (!meta_in) throw IoError("missing dataset metadata: " + (dir / "meta.json").string());
    nlohmann::json meta;
    try {
        meta_in >> meta;
    } catch (const nlohmann::json::exception& e) {
        throw IoError("malformed " + (dir / "meta.json").string() + ": " + e.what());
    }
    if (meta.value("layout_version", 0) != kDatasetLayoutVersion) throw IoError("unsupported dataset layout version");

    Dataset ds;
    ds.meta = meta.get<DatasetMeta>();
    const auto n = meta.at("n_samples").get<std::size_t>();
    const std::size_t m = ds.meta.config.grid.pixel_count();

    std::ifstream images(dir / "images.f32", std::ios::binary);
    std::ifstream labels(dir / "labels.u8", std::ios::binary);
    if (!images || !labels) throw IoError("missing dataset payload in " + dir.string());

    ds.samples.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        ImageSample& s = ds.samples[i];
        s.pixels.resize(m);
        read_f32_le(images, s.pixels);
        char label = 0;
        if (!labels.get(label)) throw IoError("truncated labels.u8");
        s.label = static_cast<std::uint8_t>(label);
        if (s.label > 1) throw IoError("labels.u8 holds a non-binary label");
        s.domain_tag = ds.meta.config.domain_tag;
        s.pair_id = static_cast<std::int64_t>(i / 2);
    }
    check_pairing(ds);
    return ds;
}

}  // namespace daobs
