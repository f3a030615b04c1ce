#include <cmath>
#include <numeric>

#include "doctest.h"
#include "scrollnet/data.hpp"
#include "scrollnet/errors.hpp"
#include "scrollnet/memory.hpp"
#include "support/oracles.hpp"

using namespace scrollnet;

namespace {

std::vector<std::vector<double>> rows(const std::vector<double>& flat, std::size_t dim) {
    std::vector<std::vector<double>> out;
    for (std::size_t i = 0; i < flat.size(); i += dim) out.emplace_back(flat.begin() + i, flat.begin() + i + dim);
    return out;
}

ClassSamples make_class(std::size_t cls, std::size_t count, oracle::Rng& rng, std::size_t dim = 3) {
    return {cls, cls / 2, cls % 2, {dim}, oracle::uniform(count * dim, rng)};
}

const FeatureFn identity = [](const Tensor& b) { return b; };

std::size_t count_of(const ExemplarMemory& m, std::size_t cls) {
    const auto it = m.per_class().find(cls);
    return it == m.per_class().end() ? 0 : it->second.size();
}

}  // namespace

TEST_CASE("herding examples") {
    oracle::Rng rng(60);
    const auto pts = oracle::uniform(5 * 2, rng);
    const auto all = herding_select(pts, 2, 10);
    CHECK(all.size() == 5);
    CHECK(all == oracle::herding(rows(pts, 2), 5));

    // budget 1 picks the point nearest the class mean
    const std::vector<double> line{0, 0, 10, 0, 4, 0, 6, 1};
    CHECK(herding_select(line, 2, 1) == std::vector<std::size_t>{2});

    CHECK_THROWS_AS(herding_select(line, 2, 0), InputError);
    CHECK_THROWS_AS(herding_select(std::vector<double>{1, 2, 3}, 2, 1), InputError);
}

TEST_CASE("herding matches the brute-force greedy oracle") {
    oracle::Rng rng(61);
    for (int k = 0; k < 50; ++k) {
        const std::size_t n = k < 25 ? 6 : oracle::pick(rng, 2, 30), dim = k < 25 ? 2 : oracle::pick(rng, 1, 8);
        const std::size_t m = k < 25 ? 3 : oracle::pick(rng, 1, n + 2);
        const auto pts = oracle::uniform(n * dim, rng);
        CHECK(herding_select(pts, dim, m) == oracle::herding(rows(pts, dim), m));
    }
}

TEST_CASE("herding is deterministic and follows its inputs under reordering") {
    oracle::Rng rng(62);
    for (int k = 0; k < 20; ++k) {
        const std::size_t n = 12, dim = 3;
        const auto pts = oracle::uniform(n * dim, rng);
        const auto base = herding_select(pts, dim, 5);
        CHECK(herding_select(pts, dim, 5) == base);
        std::vector<std::size_t> perm(n);
        std::iota(perm.begin(), perm.end(), std::size_t{0});
        std::shuffle(perm.begin(), perm.end(), rng);
        std::vector<double> shuffled;
        for (auto p : perm) shuffled.insert(shuffled.end(), pts.begin() + p * dim, pts.begin() + (p + 1) * dim);
        const auto moved = herding_select(shuffled, dim, 5);
        for (std::size_t i = 0; i < 5; ++i) CHECK(perm[moved[i]] == base[i]);
    }
    // exact ties go to the lowest index
    const std::vector<double> tie{1, 0, -1, 0, 1, 0, -1, 0};
    CHECK(herding_select(tie, 2, 2) == std::vector<std::size_t>{0, 1});
}

TEST_CASE("rebalance quota arithmetic") {
    oracle::Rng rng(63);
    ExemplarMemory mem(2000);
    std::vector<ClassSamples> cls;
    for (std::size_t c = 0; c < 10; ++c) cls.push_back(make_class(c, 250, rng));
    const auto report = mem.rebalance(cls, identity);
    CHECK(report.quota == 200);
    CHECK(report.dropped_classes.empty());
    CHECK(mem.size() == 2000);
    for (std::size_t c = 0; c < 10; ++c) CHECK(count_of(mem, c) == 200);

    // class smaller than its quota keeps everything
    ExemplarMemory small(100);
    small.rebalance({make_class(0, 7, rng)}, identity);
    CHECK(count_of(small, 0) == 7);
}

TEST_CASE("rebalance shrinks monotonically and keeps herding prefixes") {
    oracle::Rng rng(64);
    ExemplarMemory mem(60);
    std::map<std::size_t, std::vector<std::vector<double>>> before;
    std::size_t next = 0;
    for (int task = 0; task < 5; ++task) {
        std::vector<ClassSamples> cls{make_class(next, 40, rng), make_class(next + 1, 40, rng)};
        next += 2;
        std::map<std::size_t, std::size_t> counts;
        for (const auto& [c, list] : mem.per_class()) counts[c] = list.size();
        const auto report = mem.rebalance(cls, identity);
        CHECK(report.quota == std::max<std::size_t>(1, 60 / next));
        CHECK(mem.size() <= 60);
        for (const auto& [c, n] : counts) {
            CHECK(count_of(mem, c) <= n);
            const auto& list = mem.per_class().at(c);
            for (std::size_t i = 0; i < list.size(); ++i) CHECK(list[i].input == before[c][i]);
        }
        // new classes follow the herding order over their own samples
        for (const auto& c : cls) {
            const auto order = herding_select(c.inputs, 3, report.quota);
            const auto& list = mem.per_class().at(c.global_class);
            REQUIRE(list.size() == order.size());
            for (std::size_t i = 0; i < order.size(); ++i) {
                CHECK(list[i].input == std::vector<double>(c.inputs.begin() + order[i] * 3, c.inputs.begin() + order[i] * 3 + 3));
                CHECK(list[i].task == c.task);
                CHECK(list[i].label == c.label);
            }
        }
        before.clear();
        for (const auto& [c, list] : mem.per_class())
            for (const auto& e : list) before[c].push_back(e.input);
    }
}

TEST_CASE("budget below the class count drops the highest classes") {
    oracle::Rng rng(65);
    ExemplarMemory mem(3);
    std::vector<ClassSamples> cls;
    for (std::size_t c = 0; c < 5; ++c) cls.push_back(make_class(c, 4, rng));
    const auto report = mem.rebalance(cls, identity);
    CHECK(report.quota == 1);
    CHECK(report.dropped_classes == std::vector<std::size_t>{3, 4});
    CHECK(mem.size() == 3);
    CHECK(count_of(mem, 3) == 0);

    ExemplarMemory off;
    off.rebalance(cls, identity);
    CHECK(off.empty());
}

TEST_CASE("replay leaves the batch alone when nothing would be drawn") {
    oracle::Rng rng(66);
    Batch b{Tensor::from({4, 3}, oracle::uniform(12, rng)), {0, 1, 0, 1}, {2, 2, 2, 2}};
    std::mt19937_64 gen(1);
    const ExemplarMemory empty(10);
    CHECK(replay_batch(b, empty, 0.5, gen).inputs.same(b.inputs));

    ExemplarMemory mem(10);
    mem.rebalance({make_class(0, 5, rng)}, identity);
    CHECK(replay_batch(b, mem, 0.2, gen).inputs.same(b.inputs));  // floor(0.2 * 4) = 0
    CHECK(replay_batch(b, mem, 0.0, gen).size() == 4);

    const auto mixed = replay_batch(b, mem, 0.5, gen);
    CHECK(mixed.size() == 6);
    CHECK(mixed.tasks[4] == 0);
    for (std::size_t i = 0; i < 12; ++i) CHECK(mixed.inputs.at(i) == b.inputs.at(i));
}

TEST_CASE("replay draws exemplars uniformly") {
    oracle::Rng rng(67);
    ExemplarMemory mem(20);
    std::vector<ClassSamples> cls;
    for (std::size_t c = 0; c < 4; ++c) cls.push_back(make_class(c, 5, rng));
    mem.rebalance(cls, identity);
    REQUIRE(mem.size() == 20);

    // identify exemplars by their first coordinate
    std::map<double, std::size_t> slot;
    for (std::size_t i = 0; i < mem.size(); ++i) slot[mem.at(i).input[0]] = i;
    REQUIRE(slot.size() == 20);

    Batch b{Tensor::from({1, 3}, {0.0, 0.0, 0.0}), {0}, {0}};
    std::mt19937_64 gen(123);
    std::vector<std::size_t> hits(20, 0);
    const std::size_t draws = 10000;
    for (std::size_t k = 0; k < draws; ++k) {
        const auto r = replay_batch(b, mem, 1.0, gen);
        ++hits[slot.at(r.inputs.at(3))];
    }
    const double p = 1.0 / 20, mean = draws * p, sigma = std::sqrt(draws * p * (1 - p));
    for (auto h : hits) CHECK(std::abs(static_cast<double>(h) - mean) <= 3 * sigma);
}
