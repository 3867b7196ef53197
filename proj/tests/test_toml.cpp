#include <catch2/catch_amalgamated.hpp>

#include "streamnas/toml.hpp"

using namespace streamnas;

TEST_CASE("toml basics: scalars, tables, arrays, comments") {
    const auto root = toml::parse(R"(
# run configuration
seed = 42
name = "toy run"
ratio = 0.75
negative = -3.5
enabled = true
disabled = false
empty_list = []
ints = [1, 2, 3]
strings = ["a", "b"]

[nested.inner]
value = 9
)");
    CHECK(root.get_integer("seed") == 42);
    CHECK(root.get_string("name") == "toy run");
    CHECK(root.get_float("ratio") == 0.75);
    CHECK(root.get_float("negative") == -3.5);
    CHECK(root.get_bool("enabled"));
    CHECK_FALSE(root.get_bool("disabled"));
    CHECK(root.at("empty_list").array().empty());
    REQUIRE(root.at("ints").array().size() == 3);
    CHECK(root.at("ints").array()[2]->as_integer() == 3);
    CHECK(root.at("strings").array()[1]->as_string() == "b");
    CHECK(root.at("nested").at("inner").get_integer("value") == 9);
}

TEST_CASE("toml arrays of tables preserve order and nesting") {
    const auto root = toml::parse(R"(
[[stream]]
id = "au"
[[stream.slot]]
id = "layer0"
choices = ["conv3", "identity"]
[[stream.slot]]
id = "layer1"
choices = ["conv5"]

[[stream]]
id = "lm"
)");
    const auto& streams = root.at("stream").array();
    REQUIRE(streams.size() == 2);
    CHECK(streams[0]->get_string("id") == "au");
    CHECK(streams[1]->get_string("id") == "lm");
    const auto& slots = streams[0]->at("slot").array();
    REQUIRE(slots.size() == 2);
    CHECK(slots[0]->get_string("id") == "layer0");
    CHECK(slots[0]->at("choices").array().size() == 2);
    CHECK_FALSE(streams[1]->contains("slot"));
}

TEST_CASE("toml numbers: float detection and exponents") {
    const auto root = toml::parse("a = 1e-3\nb = 2.5E2\nc = 10\nd = 1_000\n");
    CHECK(root.at("a").is_float());
    CHECK(root.get_float("a") == 1e-3);
    CHECK(root.get_float("b") == 250.0);
    CHECK(root.at("c").is_integer());
    CHECK(root.get_integer("d") == 1000);
    // integers read as floats and vice versa
    CHECK(root.get_float("c") == 10.0);
}

TEST_CASE("toml string escapes") {
    const auto root = toml::parse(R"(path = "a\\b"
text = "line\nbreak"
quoted = "say \"hi\""
)");
    CHECK(root.get_string("path") == "a\\b");
    CHECK(root.get_string("text") == "line\nbreak");
    CHECK(root.get_string("quoted") == "say \"hi\"");
}

TEST_CASE("toml malformed input names the line") {
    CHECK_THROWS_WITH(toml::parse("a = \n"), Catch::Matchers::ContainsSubstring("line 1"));
    CHECK_THROWS_AS(toml::parse("a = \"unterminated\n"), IoError);
    CHECK_THROWS_AS(toml::parse("[table\nx = 1\n"), IoError);
    CHECK_THROWS_AS(toml::parse("a = 1\na = 2\n"), IoError);
    CHECK_THROWS_AS(toml::parse("a = zzz\n"), IoError);
}

TEST_CASE("toml missing keys fall back to defaults") {
    const auto root = toml::parse("present = 1\n");
    CHECK(root.get_integer("absent", 7) == 7);
    CHECK(root.get_string("absent", "x") == "x");
    CHECK(root.get_float("absent", 1.5) == 1.5);
    CHECK(root.get_bool("absent", true));
    CHECK_THROWS_AS(root.at("absent"), IoError);
}
