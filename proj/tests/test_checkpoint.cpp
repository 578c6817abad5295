#include <cstdio>
#include <fstream>
#include <string>

#include "doctest.h"
#include "motionplan/checkpoint.hpp"

using namespace motionplan;

namespace {

std::string temp_path(const char* name) {
    return std::string("./ckpt_test_") + name;
}

}  // namespace

TEST_CASE("crc64 matches the standard check value") {
    const char* s = "123456789";
    CHECK(crc64(reinterpret_cast<const uint8_t*>(s), 9) ==
          0x995DC9BBDF1939FAull);
}

TEST_CASE("crc64 of empty input is zero and seeding chains") {
    CHECK(crc64(nullptr, 0) == 0);
    const uint8_t data[] = {1, 2, 3, 4};
    uint64_t whole = crc64(data, 4);
    uint64_t part = crc64(data + 2, 2, crc64(data, 2));
    CHECK(whole == part);
}

TEST_CASE("array save/load round trip is exact") {
    ArrayMap arrays;
    arrays["alpha"] = {{2, 3}, {1.5f, -2.25f, 0.0f, 3.0f, -0.125f, 7.0f}};
    arrays["beta.gamma"] = {{4}, {1e-30f, 1e30f, -0.0f, 42.0f}};
    std::string path = temp_path("roundtrip");
    save_arrays(path, arrays);
    ArrayMap loaded = load_arrays(path);
    REQUIRE(loaded.size() == 2);
    CHECK(loaded.at("alpha").shape == Shape{2, 3});
    CHECK(loaded.at("alpha").data == arrays.at("alpha").data);
    CHECK(loaded.at("beta.gamma").data == arrays.at("beta.gamma").data);
    std::remove(path.c_str());
}

TEST_CASE("corrupted checkpoint fails the integrity check") {
    ArrayMap arrays;
    arrays["x"] = {{8}, {0, 1, 2, 3, 4, 5, 6, 7}};
    std::string path = temp_path("corrupt");
    save_arrays(path, arrays);
    {
        std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
        f.seekg(20);
        char byte = 0;
        f.read(&byte, 1);
        byte = static_cast<char>(byte ^ 0xFF);
        f.seekp(20);
        f.write(&byte, 1);
    }
    CHECK_THROWS_WITH_AS(load_arrays(path), doctest::Contains("CRC"),
                         std::exception);
    std::remove(path.c_str());
}

TEST_CASE("wrong magic and truncation are reported with context") {
    std::string path = temp_path("magic");
    {
        std::ofstream f(path, std::ios::binary);
        f << "NOTMAGIC" << std::string(32, '\0');
    }
    CHECK_THROWS(load_arrays(path));
    std::remove(path.c_str());
}

TEST_CASE("parameter checkpoints route extra arrays separately") {
    RngState rng(3);
    ParameterStore store;
    store.create_weight("m.w", {3, 2}, 3, rng);
    store.create_bias("m.b", 2);
    ArrayMap extra;
    extra["codes"] = {{2, 2}, {9, 8, 7, 6}};
    std::string path = temp_path("store");
    save_checkpoint(path, store, extra);

    ParameterStore loaded;
    ArrayMap extra_out;
    load_checkpoint(path, loaded, &extra_out);
    CHECK(loaded.get("m.w").value() == store.get("m.w").value());
    CHECK(loaded.get("m.b").value() == store.get("m.b").value());
    REQUIRE(extra_out.count("codes") == 1);
    CHECK(extra_out.at("codes").data == extra.at("codes").data);
    CHECK_FALSE(loaded.has("extra.codes"));
    std::remove(path.c_str());
}

TEST_CASE("checkpoint bytes are deterministic") {
    RngState rng(5);
    ParameterStore store;
    store.create_weight("w", {4, 4}, 4, rng);
    std::string p1 = temp_path("det1"), p2 = temp_path("det2");
    save_checkpoint(p1, store);
    save_checkpoint(p2, store);
    std::ifstream a(p1, std::ios::binary), b(p2, std::ios::binary);
    std::string sa((std::istreambuf_iterator<char>(a)), {});
    std::string sb((std::istreambuf_iterator<char>(b)), {});
    CHECK(sa == sb);
    CHECK(!sa.empty());
    std::remove(p1.c_str());
    std::remove(p2.c_str());
}
