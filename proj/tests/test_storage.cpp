#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "daobs/checkpoint.hpp"
#include "daobs/dataset_io.hpp"
#include "daobs/errors.hpp"
#include "daobs/hashing.hpp"
#include "daobs/observers.hpp"

using namespace daobs;
namespace fs = std::filesystem;

namespace {

fs::path scratch_dir(const std::string& name) {
    const fs::path d = fs::temp_directory_path() / ("daobs_test_" + name);
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
}

}  // namespace

TEST_CASE("checkpoint round trip is bit exact") {
    const GridSpec grid{16, 16};
    for (Role role : {Role::ENN, Role::DAM}) {
        ObserverParams p = init_params(encoder_spec(role, grid, {}), 17);
        p.input = {12.5F, 0.125F};
        p.lineage = "init:17>test";
        std::stringstream buf;
        write_checkpoint(buf, p);
        const ObserverParams q = read_checkpoint(buf);
        CHECK(q.arch == p.arch);
        CHECK(q.input == p.input);
        CHECK(q.lineage == p.lineage);
        CHECK(q.weights == p.weights);
        CHECK(weights_hash(q) == weights_hash(p));
    }
    const ObserverParams onn = init_params(onn_spec(128, {}), 1);
    const ObserverParams dcm = init_params(dcm_spec(128, {}), 2);
    const fs::path dir = scratch_dir("ckpt");
    save_checkpoint(onn, dir / "onn.ckpt");
    save_checkpoint(dcm, dir / "dcm.ckpt");
    CHECK(load_checkpoint(dir / "onn.ckpt").weights == onn.weights);
    CHECK(load_checkpoint(dir / "dcm.ckpt").role() == Role::DCM);
}

TEST_CASE("damaged checkpoints are rejected") {
    const ObserverParams p = init_params(onn_spec(8, {}), 1);
    std::stringstream buf;
    write_checkpoint(buf, p);
    const std::string whole = buf.str();
    std::stringstream truncated(whole.substr(0, whole.size() - 3));
    CHECK_THROWS_AS(read_checkpoint(truncated), IoError);
    std::stringstream garbage("not a checkpoint\n{}\n");
    CHECK_THROWS_AS(read_checkpoint(garbage), IoError);
    CHECK_THROWS_AS(load_checkpoint("/nonexistent/x.ckpt"), IoError);
}

TEST_CASE("dataset round trip") {
    GenerationConfig c;
    c.domain_tag = "T3.0";
    c.system = {50.0, 3.0};
    c.grid = {12, 10};
    c.signal.center = {6, 5};
    Dataset ds = generate_dataset(c, 4, 8);
    ds.meta.note = "unit";
    const fs::path dir = scratch_dir("ds");
    save_dataset(ds, dir);
    const Dataset back = load_dataset(dir);
    REQUIRE(back.size() == ds.size());
    CHECK(back.meta.config == ds.meta.config);
    CHECK(back.meta.seed == 8u);
    CHECK(back.meta.note == "unit");
    for (std::size_t i = 0; i < ds.size(); ++i) {
        CHECK(back.samples[i].pixels == ds.samples[i].pixels);
        CHECK(back.samples[i].label == ds.samples[i].label);
        CHECK(back.samples[i].pair_id == ds.samples[i].pair_id);
        CHECK(back.samples[i].domain_tag == "T3.0");
    }
    const std::uint64_t h = hash_path(dir);
    save_dataset(ds, dir);
    CHECK(hash_path(dir) == h);
    CHECK_THROWS_AS(load_dataset(dir / "missing"), IoError);
}

TEST_CASE("hashing") {
    Fnv1a64 a;
    a.update("a");
    CHECK(a.digest() == 0xaf63dc4c8601ec8cULL);
    CHECK(to_hex(0xabcULL) == "0000000000000abc");
    const fs::path dir = scratch_dir("hash");
    std::ofstream(dir / "f") << "x";
    const std::uint64_t h = hash_path(dir);
    std::ofstream(dir / "f") << "y";
    CHECK(hash_path(dir) != h);
}
