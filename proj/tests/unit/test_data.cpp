#include "flsim/binary_io.hpp"
#include "flsim/dataset.hpp"
#include "flsim/partition.hpp"

#include <gtest/gtest.h>

#include <filesystem>
#include <set>

using namespace flsim;

namespace {

std::filesystem::path temp_dir(const std::string& name)
{
    auto p = std::filesystem::temp_directory_path() / ("flsim_test_" + name);
    std::filesystem::create_directories(p);
    return p;
}

Dataset tiny_dataset()
{
    Dataset ds;
    ds.feature_dim = 3;
    ds.class_count = 4;
    ds.examples = {{{0.5, -1.25, 2.0}, 0}, {{1.0, 0.0, -0.125}, 3}, {{0.25, 0.75, 8.0}, 1}};
    return ds;
}

void put_be32(std::vector<char>& v, std::uint32_t x)
{
    for (int s = 24; s >= 0; s -= 8) v.push_back(static_cast<char>((x >> s) & 0xff));
}

} // namespace

TEST(Flds, RoundTripPreservesEverything)
{
    const auto ds = tiny_dataset();
    const auto back = decode_native(encode_native(ds));
    EXPECT_EQ(back.feature_dim, 3u);
    EXPECT_EQ(back.class_count, 4u);
    EXPECT_EQ(back.examples, ds.examples);
}

TEST(Flds, HeaderLayout)
{
    const auto bytes = encode_native(tiny_dataset());
    EXPECT_EQ(std::string(bytes.begin(), bytes.begin() + 4), "FLDS");
    EXPECT_EQ(bytes.size(), 4u + 2 + 4 + 4 + 2 + 3 * 3 * 4 + 3 * 2);
    ByteReader r(bytes);
    r.get_string(4);
    EXPECT_EQ(r.get<std::uint16_t>(), 1u);
    EXPECT_EQ(r.get<std::uint32_t>(), 3u);
    EXPECT_EQ(r.get<std::uint32_t>(), 3u);
    EXPECT_EQ(r.get<std::uint16_t>(), 4u);
}

TEST(Flds, SyntheticRoundTripWithinFloatCast)
{
    const auto ds = synth_radar(4, 40);
    const auto back = decode_native(encode_native(ds));
    ASSERT_EQ(back.size(), ds.size());
    for (std::size_t h = 0; h < ds.size(); ++h) {
        EXPECT_EQ(back.examples[h].y, ds.examples[h].y);
        for (std::size_t j = 0; j < ds.feature_dim; ++j)
            EXPECT_NEAR(back.examples[h].x[j], ds.examples[h].x[j], 1e-6 * std::max(1.0, std::abs(ds.examples[h].x[j])));
    }
}

TEST(Flds, FileRoundTrip)
{
    const auto path = temp_dir("flds") / "tiny.flds";
    save_native(path.string(), tiny_dataset());
    EXPECT_EQ(load_native(path.string()).examples, tiny_dataset().examples);
}

TEST(Flds, CorruptionReportsOffset)
{
    const auto good = encode_native(tiny_dataset());

    auto bad = good;
    bad[1] = 'X';
    EXPECT_THROW(decode_native(bad), FormatError);

    bad = good;
    bad[4] = 2;
    try {
        decode_native(bad);
        FAIL();
    } catch (const FormatError& e) {
        EXPECT_EQ(e.offset, 4u);
    }

    bad = good;
    bad.resize(good.size() - 1);
    EXPECT_THROW(decode_native(bad), FormatError);

    bad = good;
    bad.push_back(0);
    try {
        decode_native(bad);
        FAIL();
    } catch (const FormatError& e) {
        EXPECT_EQ(e.offset, good.size());
    }

    // last label set to 9 with class_count 4
    bad = good;
    bad[good.size() - 2] = 9;
    try {
        decode_native(bad);
        FAIL();
    } catch (const FormatError& e) {
        EXPECT_EQ(e.offset, good.size() - 2);
    }

    bad = encode_native(tiny_dataset());
    bad[6] = bad[7] = bad[8] = bad[9] = 0;
    EXPECT_THROW(decode_native(bad), FormatError);
}

TEST(Idx, LoadsBigEndianPair)
{
    std::vector<char> img, lbl;
    put_be32(img, 0x803);
    put_be32(img, 2);
    put_be32(img, 2);
    put_be32(img, 2);
    for (int v : {0, 255, 51, 102, 255, 0, 0, 0}) img.push_back(static_cast<char>(v));
    put_be32(lbl, 0x801);
    put_be32(lbl, 2);
    lbl.push_back(7);
    lbl.push_back(2);
    const auto dir = temp_dir("idx");
    write_file((dir / "img").string(), img);
    write_file((dir / "lbl").string(), lbl);
    const auto ds = load_idx((dir / "img").string(), (dir / "lbl").string());
    ASSERT_EQ(ds.size(), 2u);
    EXPECT_EQ(ds.feature_dim, 4u);
    EXPECT_EQ(ds.examples[0].y, 7u);
    EXPECT_EQ(ds.examples[1].y, 2u);
    EXPECT_DOUBLE_EQ(ds.examples[0].x[1], 1.0);
    EXPECT_DOUBLE_EQ(ds.examples[0].x[2], 0.2);

    lbl[3] = 9; // bad magic
    write_file((dir / "lbl").string(), lbl);
    EXPECT_THROW(load_idx((dir / "img").string(), (dir / "lbl").string()), FormatError);
}

TEST(Synth, RadarShapeAndBalance)
{
    const auto ds = synth_radar(1, 803);
    EXPECT_EQ(ds.feature_dim, 512u);
    EXPECT_EQ(ds.class_count, 8u);
    for (auto c : ds.class_histogram()) {
        EXPECT_GE(c, 803u / 8);
        EXPECT_LE(c, 803u / 8 + 1);
    }
}

TEST(Synth, DigitsShapeAndBalance)
{
    const auto ds = synth_digits(1, 205);
    EXPECT_EQ(ds.feature_dim, 784u);
    EXPECT_EQ(ds.class_count, 10u);
    for (auto c : ds.class_histogram()) {
        EXPECT_GE(c, 20u);
        EXPECT_LE(c, 21u);
    }
    for (const auto& e : ds.examples)
        for (double v : e.x) {
            EXPECT_GE(v, 0.0);
            EXPECT_LE(v, 1.0);
        }
}

TEST(Synth, SameSeedIsBitIdentical)
{
    EXPECT_EQ(synth_radar(9, 50).examples, synth_radar(9, 50).examples);
    EXPECT_EQ(synth_digits(9, 50).examples, synth_digits(9, 50).examples);
    EXPECT_NE(synth_radar(9, 50).examples, synth_radar(10, 50).examples);
}

TEST(Synth, RadarNoiselessPeakLiesInClassBand)
{
    const auto ds = synth_radar(3, 200, 8, 512, 0.0);
    for (const auto& e : ds.examples) {
        const auto peak = static_cast<std::size_t>(std::max_element(e.x.begin(), e.x.end()) - e.x.begin());
        EXPECT_EQ(peak / 64, e.y);
    }
}

TEST(Synth, ArgumentChecks)
{
    EXPECT_THROW(synth_radar(1, 4), std::invalid_argument);
    EXPECT_THROW(synth_radar(1, 100, 8, 512, -1.0), std::invalid_argument);
    EXPECT_THROW(synth_digits(1, 100, 10, 783), std::invalid_argument);
}

TEST(Partition, IidEqualShards)
{
    const auto ds = synth_digits(2, 1600);
    PartitionSpec spec;
    spec.seed = 5;
    const auto shards = partition(ds, 4, spec);
    ASSERT_EQ(shards.size(), 4u);
    std::set<std::size_t> seen;
    for (const auto& s : shards) {
        EXPECT_EQ(s.size(), 400u);
        for (auto h : s.source_indices) EXPECT_TRUE(seen.insert(h).second) << "index " << h << " repeated";
    }
    EXPECT_EQ(seen.size(), 1600u);
}

TEST(Partition, NonIidUnevenSizesAndSubsets)
{
    const auto ds = synth_digits(2, 3200);
    PartitionSpec spec;
    spec.scheme = PartitionScheme::noniid;
    spec.sizes = {80, 400, 720, 400};
    spec.class_subsets = {{0, 1, 2, 3, 4, 5}, {0, 1, 2, 3, 4, 5, 6, 7, 8, 9}, {0, 1, 2, 3, 4, 5, 6, 7, 8, 9},
                          {3, 4, 5, 6, 7, 8, 9}};
    spec.seed = 7;
    const auto shards = partition(ds, 4, spec);
    EXPECT_EQ(shards[0].size(), 80u);
    EXPECT_EQ(shards[2].size(), 720u);
    for (const auto& e : shards[0].examples) EXPECT_LT(e.y, 6u);
    for (const auto& e : shards[3].examples) EXPECT_GE(e.y, 3u);
    std::set<std::size_t> seen, classes;
    for (const auto& s : shards)
        for (std::size_t i = 0; i < s.size(); ++i) {
            EXPECT_TRUE(seen.insert(s.source_indices[i]).second);
            classes.insert(s.examples[i].y);
        }
    EXPECT_EQ(classes.size(), 10u);
}

TEST(Partition, RandomSubsetsCoverEveryClass)
{
    const auto ds = synth_radar(1, 4000);
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        PartitionSpec spec;
        spec.scheme = PartitionScheme::noniid;
        spec.per_node = 25;
        spec.min_classes = 1;
        spec.max_classes = 3;
        spec.seed = seed;
        const auto shards = partition(ds, 80, spec);
        std::set<std::size_t> classes;
        for (const auto& s : shards) {
            EXPECT_EQ(s.size(), 25u);
            std::set<std::size_t> mine;
            for (const auto& e : s.examples) mine.insert(e.y), classes.insert(e.y);
            EXPECT_LE(mine.size(), 3u);
        }
        EXPECT_EQ(classes.size(), 8u);
    }
}

TEST(Partition, Errors)
{
    const auto ds = synth_radar(1, 100);
    PartitionSpec spec;
    spec.per_node = 30;
    EXPECT_THROW(partition(ds, 4, spec), PartitionError);
    spec = {};
    EXPECT_THROW(partition(ds, 0, spec), PartitionError);
    spec.sizes = {10, 10};
    EXPECT_THROW(partition(ds, 3, spec), PartitionError);
    spec = {};
    spec.scheme = PartitionScheme::noniid;
    spec.class_subsets = {{0}, {1}};
    EXPECT_THROW(partition(ds, 2, spec), PartitionError);
}

TEST(Partition, DeterministicPerSeed)
{
    const auto ds = synth_radar(1, 400);
    PartitionSpec spec;
    spec.seed = 3;
    const auto a = partition(ds, 8, spec);
    const auto b = partition(ds, 8, spec);
    for (std::size_t k = 0; k < 8; ++k) EXPECT_EQ(a[k].source_indices, b[k].source_indices);
    spec.seed = 4;
    EXPECT_NE(partition(ds, 8, spec)[0].source_indices, a[0].source_indices);
}

TEST(Minibatches, CountsAndCoverage)
{
    const auto ds = synth_digits(2, 1600);
    PartitionSpec spec;
    const auto shards = partition(ds, 4, spec);
    EXPECT_EQ(minibatches(shards[0], 5, 1, 0).size(), 80u);

    Shard small;
    small.examples.resize(25);
    EXPECT_EQ(minibatches(small, 5, 1, 0).size(), 5u);
    EXPECT_EQ(minibatches(small, 25, 1, 0).size(), 1u);
    EXPECT_EQ(minibatches(small, 25, 1, 0)[0].size(), 25u);
    const auto odd = minibatches(small, 7, 1, 0);
    ASSERT_EQ(odd.size(), 4u);
    EXPECT_EQ(odd.back().size(), 4u);
    std::set<std::size_t> all;
    for (const auto& b : odd) all.insert(b.begin(), b.end());
    EXPECT_EQ(all.size(), 25u);
    EXPECT_THROW(minibatches(small, 26, 1, 0), std::invalid_argument);
    EXPECT_THROW(minibatches(small, 0, 1, 0), std::invalid_argument);
}

TEST(Minibatches, OrderDependsOnSeedEpochAndOwner)
{
    Shard s;
    s.examples.resize(40);
    const auto base = minibatches(s, 5, 1, 0);
    EXPECT_EQ(minibatches(s, 5, 1, 0), base);
    EXPECT_NE(minibatches(s, 5, 2, 0), base);
    EXPECT_NE(minibatches(s, 5, 1, 1), base);
    s.owner = 3;
    EXPECT_NE(minibatches(s, 5, 1, 0), base);
}

TEST(Minibatches, PooledShardConcatenates)
{
    const auto ds = synth_radar(1, 100);
    const auto shards = partition(ds, 4, PartitionSpec{});
    const auto pooled = pool_shards(shards);
    EXPECT_EQ(pooled.size(), 100u);
    EXPECT_EQ(pooled.examples[25], shards[1].examples[0]);
}
