#include <doctest.h>

#include <stdexcept>

#include <bit>
#include <cstring>
#include <filesystem>
#include <fstream>

#include "resattn/checkpoint.hpp"

using namespace resattn;

namespace {

Model tiny(std::uint64_t seed, std::size_t layers = 1) {
    ModelConfig cfg;
    cfg.n_layers = layers;
    cfg.d_model = 4;
    cfg.n_heads = 2;
    cfg.head_dim = 2;
    cfg.d_ff = 6;
    cfg.vocab_size = 5;
    cfg.seed = Seed{seed};
    return init_model(cfg);
}

std::uint32_t read_u32(const std::vector<std::uint8_t>& b, std::size_t at) {
    return std::uint32_t(b[at]) | std::uint32_t(b[at + 1]) << 8 | std::uint32_t(b[at + 2]) << 16 |
           std::uint32_t(b[at + 3]) << 24;
}

std::filesystem::path temp_path(const char* name) { return std::filesystem::temp_directory_path() / name; }

}  // namespace

TEST_CASE("header layout is little-endian with sorted names") {
    Model m = tiny(1);
    const auto bytes = encode_checkpoint(m.params);
    CHECK(std::string(bytes.begin(), bytes.begin() + 4) == "RATN");
    CHECK(read_u32(bytes, 4) == kCheckpointVersion);
    CHECK(read_u32(bytes, 8) == param_refs(m.params).size());
    const auto entries = decode_checkpoint(bytes);
    for (std::size_t i = 1; i < entries.size(); ++i) CHECK(entries[i - 1].name < entries[i].name);
    // First entry, first value, read by hand.
    const std::size_t name_len = read_u32(bytes, 12);
    const std::size_t ndim = read_u32(bytes, 16 + name_len);
    std::uint64_t bits = 0;
    for (int i = 7; i >= 0; --i) bits = bits << 8 | bytes[20 + name_len + 8 * ndim + std::size_t(i)];
    CHECK(std::bit_cast<double>(bits) == entries[0].values[0]);
}

TEST_CASE("save and load round trip bit for bit") {
    Model a = tiny(2, 2);
    const auto path = temp_path("resattn_roundtrip.ratn");
    save_checkpoint(path, a.params);
    Model b = tiny(3, 2);
    CHECK_FALSE(b.params.embedding == a.params.embedding);
    load_checkpoint(path, b.params);
    CHECK(encode_checkpoint(b.params) == encode_checkpoint(a.params));
    std::filesystem::remove(path);
}

TEST_CASE("corrupt and mismatched files are rejected") {
    Model m = tiny(4);
    const auto good = encode_checkpoint(m.params);

    auto bad_magic = good;
    bad_magic[0] = 'X';
    CHECK_THROWS_WITH(decode_checkpoint(bad_magic), doctest::Contains("magic"));

    auto bad_version = good;
    bad_version[4] = 9;
    CHECK_THROWS_WITH(decode_checkpoint(bad_version), doctest::Contains("version"));

    auto truncated = good;
    truncated.resize(good.size() - 3);
    CHECK_THROWS_WITH(decode_checkpoint(truncated), doctest::Contains("truncated"));

    auto trailing = good;
    trailing.push_back(0);
    CHECK_THROWS_WITH(decode_checkpoint(trailing), doctest::Contains("trailing"));

    const auto path = temp_path("resattn_mismatch.ratn");
    save_checkpoint(path, m.params);
    Model other = tiny(4, 2);
    CHECK_THROWS_AS(load_checkpoint(path, other.params), std::runtime_error);
    std::filesystem::remove(path);
    CHECK_THROWS_WITH(load_checkpoint(temp_path("resattn_missing.ratn"), m.params), doctest::Contains("cannot open"));
}
