#include "doctest.h"

#include <filesystem>

#include "c2vl/common.hpp"
#include "c2vl/image.hpp"
#include "test_util.hpp"

using namespace c2vl;

TEST_CASE("base64 round trip") {
    std::vector<std::uint8_t> data;
    for (int n = 0; n < 10; ++n) {
        CHECK(base64_decode(base64_encode(data)) == data);
        data.push_back(static_cast<std::uint8_t>(n * 37 + 5));
    }
    CHECK(base64_encode({'a', 'b', 'c'}) == "YWJj");
}

TEST_CASE("fnv1a64 is stable and sensitive") {
    CHECK(fnv1a64("") == 0xcbf29ce484222325ull);
    CHECK(fnv1a64("abc") == fnv1a64("abc"));
    CHECK(fnv1a64("abc") != fnv1a64("abd"));
    CHECK(hex_digest(fnv1a64("abc")).size() == 16);
}

TEST_CASE("atomic write leaves no temp file") {
    std::string dir = c2vl_test::make_temp_dir("atomic");
    atomic_write_file(dir + "/f.txt", "hello");
    CHECK(read_file_bytes(dir + "/f.txt") == "hello");
    CHECK_FALSE(std::filesystem::exists(dir + "/f.txt.tmp"));
}

TEST_CASE("iso timestamp shape") {
    std::string t = iso_timestamp();
    CHECK(t.size() == 20);
    CHECK(t.back() == 'Z');
    CHECK(t[4] == '-');
}

TEST_CASE("whitespace detection") {
    CHECK(is_whitespace_only("  \t\n"));
    CHECK(is_whitespace_only(""));
    CHECK_FALSE(is_whitespace_only(" x "));
}

TEST_CASE("ppm encode/decode round trip") {
    ImageBuffer img;
    img.width = 5;
    img.height = 3;
    img.rgb.resize(45);
    for (std::size_t i = 0; i < img.rgb.size(); ++i)
        img.rgb[i] = static_cast<std::uint8_t>(i * 11);
    ImageBuffer back = decode_ppm(encode_ppm(img));
    CHECK(back.width == 5);
    CHECK(back.height == 3);
    CHECK(back.rgb == img.rgb);
}

TEST_CASE("ppm decode rejects junk") {
    CHECK_THROWS_AS(decode_ppm({'P', '5', '\n'}), ParseError);
    std::vector<std::uint8_t> truncated = {'P', '6', '\n', '2', ' ', '2', '\n', '2', '5', '5', '\n', 0};
    CHECK_THROWS_AS(decode_ppm(truncated), ParseError);
}

TEST_CASE("box clip and union") {
    Box b{-0.2, 0.5, 1.4, 0.9};
    Box c = b.clipped();
    CHECK(c.x0 == 0.0);
    CHECK(c.x1 == 1.0);
    CHECK(c.y0 == 0.5);
    Box u = Box{0.1, 0.1, 0.3, 0.3}.united(Box{0.2, 0.05, 0.5, 0.2});
    CHECK(u.x0 == doctest::Approx(0.1));
    CHECK(u.y0 == doctest::Approx(0.05));
    CHECK(u.x1 == doctest::Approx(0.5));
    CHECK(u.y1 == doctest::Approx(0.3));
}

TEST_CASE("crop stays within bounds and keeps pixels") {
    ImageBuffer img;
    img.width = 10;
    img.height = 10;
    img.rgb.assign(300, 0);
    for (int y = 0; y < 10; ++y)
        for (int x = 0; x < 10; ++x) img.at(x, y, 0) = static_cast<std::uint8_t>(x + 10 * y);
    ImageBuffer c = crop_image(img, Box{0.2, 0.3, 0.6, 0.8});
    CHECK(c.width == 4);
    CHECK(c.height == 5);
    CHECK(c.at(0, 0, 0) == img.at(2, 3, 0));
    ImageBuffer edge = crop_image(img, Box{0.85, 0.85, 1.4, 1.4});
    CHECK(edge.width >= 1);
    CHECK(edge.height >= 1);
}
