#include <catch2/catch_amalgamated.hpp>

#include <set>

#include "streamnas/rng.hpp"
#include "streamnas/search_space.hpp"

using namespace streamnas;

namespace {

std::vector<DecisionSlot> slots_with_arities(const std::vector<std::size_t>& arities) {
    std::vector<DecisionSlot> slots;
    for (std::size_t s = 0; s < arities.size(); ++s) {
        DecisionSlot slot;
        slot.slot_id = "slot" + std::to_string(s);
        for (std::size_t c = 0; c < arities[s]; ++c) slot.choices.push_back("c" + std::to_string(c));
        slots.push_back(std::move(slot));
    }
    return slots;
}

}  // namespace

TEST_CASE("naive complexity is the product of sizes") {
    CHECK(naive_complexity({BigCount(10), BigCount(20)}, BigCount(5)) == 1000);
    CHECK(naive_complexity({BigCount(1)}, BigCount(1)) == 1);
    CHECK(naive_complexity({BigCount(7)}, BigCount(3)) == 21);
}

TEST_CASE("warm-up complexity adds per-stream searches to the reduced product") {
    CHECK(warmup_complexity({BigCount(10), BigCount(20)}, {BigCount(2), BigCount(3)}, BigCount(5)) ==
          60);
    // no reduction: sum of streams plus the naive size
    CHECK(warmup_complexity({BigCount(10), BigCount(20)}, {BigCount(10), BigCount(20)}, BigCount(5)) ==
          30 + 1000);
    CHECK(warmup_complexity({BigCount(8)}, {BigCount(2)}, BigCount(4)) == 16);
    CHECK_THROWS_AS(warmup_complexity({BigCount(4)}, {BigCount(5)}, BigCount(2)), ContractError);
}

TEST_CASE("complexity formulas match brute-force enumeration on random spaces") {
    Rng rng(2718);
    for (int trial = 0; trial < 50; ++trial) {
        Rng local = rng.split(trial);
        const std::size_t num_streams = 1 + local.uniform_index(3);
        std::vector<BigCount> sizes, reduced_sizes;
        std::vector<std::vector<DecisionSlot>> stream_slots;
        for (std::size_t m = 0; m < num_streams; ++m) {
            std::vector<std::size_t> arities(1 + local.uniform_index(3));
            for (auto& a : arities) a = 1 + local.uniform_index(3);
            stream_slots.push_back(slots_with_arities(arities));
            sizes.push_back(slots_size(stream_slots.back()));
            reduced_sizes.push_back(BigCount(1 + static_cast<std::int64_t>(local.uniform_index(
                static_cast<std::uint64_t>(sizes.back().convert_to<std::uint64_t>())))));
        }
        std::vector<std::size_t> fusion_arities(1 + local.uniform_index(2));
        for (auto& a : fusion_arities) a = 1 + local.uniform_index(3);
        auto fusion_slots = slots_with_arities(fusion_arities);
        const BigCount fusion_size = slots_size(fusion_slots);

        // Oracle: literally enumerate every joint assignment and count.
        std::size_t joint_count = 0;
        std::vector<std::size_t> per_stream_counts(num_streams);
        for (std::size_t m = 0; m < num_streams; ++m)
            per_stream_counts[m] = enumerate_slots(stream_slots[m], 100000).size();
        const std::size_t fusion_count = enumerate_slots(fusion_slots, 100000).size();
        std::size_t product = fusion_count;
        for (std::size_t m = 0; m < num_streams; ++m) product *= per_stream_counts[m];
        joint_count = product;

        CHECK(naive_complexity(sizes, fusion_size) == joint_count);

        // Warm-up oracle: enumerate each stream once, then the reduced joint space.
        std::size_t warm_count = 0;
        for (std::size_t m = 0; m < num_streams; ++m) warm_count += per_stream_counts[m];
        std::size_t reduced_product = fusion_count;
        for (std::size_t m = 0; m < num_streams; ++m)
            reduced_product *= reduced_sizes[m].convert_to<std::size_t>();
        CHECK(warmup_complexity(sizes, reduced_sizes, fusion_size) == warm_count + reduced_product);
    }
}

TEST_CASE("naive complexity of the default full-size model needs big integers") {
    std::vector<StreamSearchSpace> streams = {
        default_cnn_space("aus", "aus"),
        default_cnn_space("gaze", "gaze"),
        default_cnn_space("pose", "pose"),
        default_gnn_space("lm", "landmarks"),
    };
    CHECK(streams[0].size() == 21609);
    CHECK(streams[3].size() == 5184);
    const FusionSearchSpace fusion = default_fusion_space(streams);
    // taps 4*4*4*3 = 192, blocks 15*15 = 225 -> 43200
    CHECK(fusion.size() == 43200);

    std::vector<BigCount> sizes;
    for (const auto& s : streams) sizes.push_back(s.size());
    const BigCount naive = naive_complexity(sizes, fusion.size());
    CHECK(naive == BigCount("2259710211497976115200")); // 21609^3 * 5184 * 43200
    CHECK(naive > BigCount(std::numeric_limits<std::uint64_t>::max()));
}

TEST_CASE("enumerate yields every assignment exactly once in lexicographic order") {
    auto slots = slots_with_arities({2, 3});
    auto fragments = enumerate_slots(slots, 10);
    REQUIRE(fragments.size() == 6);
    CHECK(fragments.front() == std::vector<std::size_t>{0, 0});
    CHECK(fragments[1] == std::vector<std::size_t>{0, 1});
    CHECK(fragments.back() == std::vector<std::size_t>{1, 2});
    std::set<std::vector<std::size_t>> unique(fragments.begin(), fragments.end());
    CHECK(unique.size() == fragments.size());

    CHECK(enumerate_slots(slots_with_arities({1, 1, 1}), 10).size() == 1);
    CHECK_THROWS_AS(enumerate_slots(slots, 5), BudgetError);
}

TEST_CASE("enumerated count equals computed size on random small spaces") {
    Rng rng(31337);
    for (int trial = 0; trial < 50; ++trial) {
        Rng local = rng.split(trial);
        std::vector<std::size_t> arities(1 + local.uniform_index(4));
        for (auto& a : arities) a = 1 + local.uniform_index(4);
        auto slots = slots_with_arities(arities);
        auto fragments = enumerate_slots(slots, 100000);
        CHECK(BigCount(fragments.size()) == slots_size(slots));
        std::set<std::vector<std::size_t>> unique(fragments.begin(), fragments.end());
        CHECK(unique.size() == fragments.size());
    }
}

TEST_CASE("canonical key round trips") {
    Architecture arch;
    arch.streams = {{"aus", {1, 3, 0, 2}}, {"lm", {2, 0}}};
    arch.fusion = {1, 0, 2};
    arch.has_fusion = true;
    const std::string key = arch.canonical_key();
    CHECK(key == "aus=1.3.0.2|lm=2.0|f=1.0.2");
    Architecture parsed = Architecture::parse(key);
    CHECK(parsed.canonical_key() == key);
    CHECK(parsed.streams.size() == 2);
    CHECK(parsed.has_fusion);
    CHECK(parsed.fusion == std::vector<std::size_t>{1, 0, 2});

    Architecture standalone;
    standalone.streams = {{"gaze", {0}}};
    CHECK(Architecture::parse(standalone.canonical_key()).canonical_key() ==
          standalone.canonical_key());
}

TEST_CASE("canonical key is injective over an enumerable space") {
    auto slots = slots_with_arities({3, 2, 2});
    auto fragments = enumerate_slots(slots, 100);
    std::set<std::string> keys;
    for (const auto& tokens : fragments) {
        Architecture arch;
        arch.streams = {{"s", tokens}};
        keys.insert(arch.canonical_key());
    }
    CHECK(keys.size() == fragments.size());
}

TEST_CASE("token validation catches out-of-range and miscounted tokens") {
    auto slots = slots_with_arities({2, 3});
    CHECK_NOTHROW(validate_tokens(slots, {1, 2}, "test"));
    CHECK_THROWS_AS(validate_tokens(slots, {2, 0}, "test"), TokenError);
    CHECK_THROWS_AS(validate_tokens(slots, {0}, "test"), TokenError);
}

TEST_CASE("reduce_space keeps top marginals with label-order tie breaks") {
    StreamSearchSpace space;
    space.stream_id = "s";
    space.attribute_id = "aus";
    space.kind = StreamKind::cnn;
    space.depth = 1;
    space.slots = slots_with_arities({4, 4});

    SECTION("keep_per_slot = arity is a no-op reduction") {
        auto reduced = reduce_space_from_marginals(
            space, {{0.1, 0.2, 0.3, 0.4}, {0.25, 0.25, 0.25, 0.25}}, 4);
        CHECK(reduced.size() == space.size());
        for (std::size_t s = 0; s < 2; ++s)
            CHECK(reduced.kept[s] == std::vector<std::size_t>{0, 1, 2, 3});
    }

    SECTION("uniform marginals with keep 1 select the first label") {
        auto reduced = reduce_space_from_marginals(
            space, {{0.25, 0.25, 0.25, 0.25}, {0.25, 0.25, 0.25, 0.25}}, 1);
        CHECK(reduced.kept[0] == std::vector<std::size_t>{0});
        CHECK(reduced.kept[1] == std::vector<std::size_t>{0});
    }

    SECTION("keep 2 from arity 4 gives reduced size 4") {
        auto reduced = reduce_space_from_marginals(
            space, {{0.1, 0.4, 0.3, 0.2}, {0.7, 0.1, 0.1, 0.1}}, 2);
        CHECK(reduced.size() == 4);
        CHECK(reduced.kept[0] == std::vector<std::size_t>{1, 2});
        CHECK(reduced.kept[1] == std::vector<std::size_t>{0, 1});
    }

    SECTION("keep_per_slot beyond arity clamps") {
        auto reduced = reduce_space_from_marginals(
            space, {{0.1, 0.2, 0.3, 0.4}, {0.25, 0.25, 0.25, 0.25}}, 99);
        CHECK(reduced.size() == 16);
    }
}

TEST_CASE("warm-up never exceeds naive complexity once reduction bites") {
    Rng rng(777);
    for (int trial = 0; trial < 200; ++trial) {
        Rng local = rng.split(trial);
        const std::size_t m = 1 + local.uniform_index(4);
        std::vector<BigCount> sizes, reduced;
        BigCount sum = 0;
        for (std::size_t i = 0; i < m; ++i) {
            const std::uint64_t t = 2 + local.uniform_index(40);
            sizes.push_back(BigCount(t));
            reduced.push_back(BigCount(std::max<std::uint64_t>(1, t / 2)));
            sum += t;
        }
        const BigCount fusion = BigCount(1 + local.uniform_index(20));
        BigCount reduced_product = fusion;
        for (const auto& r : reduced) reduced_product *= r;
        if (reduced_product < sum) continue;  // inequality only claimed in this regime
        CHECK(warmup_complexity(sizes, reduced, fusion) <= naive_complexity(sizes, fusion));
    }
}
