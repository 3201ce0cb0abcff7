#include <doctest.h>

#include <cstdio>
#include <cstring>
#include <filesystem>
#include <random>

#include "sowpic/redistribute.hpp"
#include "test_util.hpp"

using namespace sowpic;
using namespace sowpic::redist;

namespace {

ParticleRecord rec(std::uint64_t id, double x, double y = 0.5e-6, double z = 0.5e-6) {
  ParticleRecord r;
  r.id = id;
  r.x = x;
  r.y = y;
  r.z = z;
  r.ux = 0.1 * static_cast<double>(id);
  r.uy = -0.2;
  r.uz = 0.3;
  r.w = 1.5;
  return r;
}

// 32 cells along x split over four ranks; y and z hold a single tile.
GridGeometry strip_geometry() {
  GridGeometry g = testing::cube_geometry(8);
  g.n_cell = {32, 8, 8};
  g.prob_hi = {32e-6, 8e-6, 8e-6};
  return g;
}

}  // namespace

TEST_SUITE("redistribute") {
  TEST_CASE("header and record byte layout") {
    std::array<std::byte, kHeaderBytes> h{};
    encode_header({3, 7, 2, 128, 0}, h.data());
    CHECK(h[0] == std::byte{3});
    CHECK(h[4] == std::byte{7});
    CHECK(h[8] == std::byte{2});
    CHECK(h[16] == std::byte{128});
    CHECK(decode_header(h.data()) == FrameHeader{3, 7, 2, 128, 0});

    std::array<std::byte, kRecordBytes> b{};
    const ParticleRecord r = rec(42, 1.25e-6);
    encode_record(r, b.data());
    double x = 0.0;
    std::memcpy(&x, b.data() + 8, 8);
    CHECK(x == r.x);
    CHECK(decode_record(b.data()) == r);
  }

  TEST_CASE("frames round trip and reject stale epochs") {
    std::vector<ParticleRecord> v{rec(1, 1e-6), rec(2, 2e-6), rec(3, 3e-6)};
    auto a = pack_frame(5, 9, v);
    CHECK(a.size() == kHeaderBytes + 3 * kRecordBytes);
    const auto empty = pack_frame(5, 9, {});
    CHECK(empty.size() == kHeaderBytes);
    a.insert(a.end(), empty.begin(), empty.end());
    const auto frames = unpack_frames(a, 9);
    REQUIRE(frames.size() == 2);
    CHECK(frames[0].records == v);
    CHECK(frames[0].header.source == 5);
    CHECK(frames[1].records.empty());
    CHECK_THROWS_AS(unpack_frames(a, 8), ProtocolError);
    a.pop_back();
    CHECK_THROWS_AS(unpack_frames(a, 9), ProtocolError);
  }

  TEST_CASE("snapshot files use the frame format") {
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::vector<ParticleRecord> v;
    for (std::uint64_t i = 0; i < 100; ++i) v.push_back(rec(i, u(rng)));
    const auto path = (std::filesystem::temp_directory_path() / "sowpic_snapshot_test.bin").string();
    write_snapshot(path, 17, v);
    std::uint32_t step = 0;
    CHECK(read_snapshot(path, &step) == v);
    CHECK(step == 17);
    CHECK(std::filesystem::file_size(path) == kHeaderBytes + 100 * kRecordBytes);
    std::remove(path.c_str());
  }

  TEST_CASE("route_migrant targets inboxes, neighbour lists or fails") {
    const GridGeometry g = strip_geometry();
    layout::Decomposition d(g, {4, 1, 1});
    CHECK(d.neighbor_ranks(0) == std::vector<int>{1, 3});
    std::vector<layout::ParticleTile> tiles;
    for (const Int3& t : d.tiles_of_rank(0)) tiles.push_back(layout::init_tile(g, t, 1));
    RankExchange ex(d, 0, 4);

    ex.route_migrant(rec(1, 7.5e-6), {7, 0, 0}, tiles);  // same rank
    CHECK(tiles[0].inbox.size() == 1);
    CHECK(ex.local_routed() == 1);
    CHECK(ex.outgoing(1) == 0);

    ex.route_migrant(rec(2, 8.5e-6), {8, 0, 0}, tiles);  // rank 1
    ex.route_migrant(rec(3, 31.5e-6), {31, 0, 0}, tiles);  // rank 3 across the seam
    CHECK(ex.outgoing(1) == 1);
    CHECK(ex.outgoing(3) == 1);
    CHECK(ex.remote_routed() == 2);

    CHECK_THROWS_AS(ex.route_migrant(rec(4, 16.5e-6), {16, 0, 0}, tiles), MigrationError);
    ex.clear();
    CHECK(ex.outgoing(1) == 0);
    CHECK(ex.local_routed() == 0);
  }

  TEST_CASE("encode_for spills into a second frame and no further") {
    const GridGeometry g = strip_geometry();
    layout::Decomposition d(g, {4, 1, 1});
    std::vector<layout::ParticleTile> tiles;
    for (const Int3& t : d.tiles_of_rank(0)) tiles.push_back(layout::init_tile(g, t, 1));
    RankExchange ex(d, 0, 3);
    CHECK(ex.region_bytes() == 2 * (kHeaderBytes + 3 * kRecordBytes));

    CHECK(ex.encode_for(1, 0).size() == kHeaderBytes);  // empty, header only
    for (std::uint64_t i = 0; i < 5; ++i) ex.route_migrant(rec(i, 8.5e-6), {8, 0, 0}, tiles);
    const auto two = ex.encode_for(1, 4);
    CHECK(two.size() == 2 * kHeaderBytes + 5 * kRecordBytes);
    const auto frames = unpack_frames(two, 4);
    REQUIRE(frames.size() == 2);
    CHECK(frames[0].records.size() == 3);
    CHECK(frames[1].records.size() == 2);
    CHECK(frames[1].records[1].id == 4);

    ex.route_migrant(rec(5, 8.5e-6), {8, 0, 0}, tiles);
    CHECK_NOTHROW(ex.encode_for(1, 4));
    ex.route_migrant(rec(6, 8.5e-6), {8, 0, 0}, tiles);
    CHECK_THROWS_AS(ex.encode_for(1, 4), ProtocolError);
    CHECK_THROWS_AS(ex.encode_for(2, 4), ProtocolError);
  }

  TEST_CASE("one-sided and two-sided exchange with virtual waits") {
    GridGeometry g = testing::cube_geometry(8);
    g.n_cell = {16, 8, 8};
    g.prob_hi = {16e-6, 8e-6, 8e-6};
    layout::Decomposition d(g, {2, 1, 1});
    CostModel cost;
    cost.latency_base = 4.0;
    cost.bandwidth = 0.0;
    cost.vt_issue = 0.0;
    cost.vt_issue_message = 0.0;
    cost.progression_penalty = 0.25;

    for (CommMode mode : {CommMode::OneSided, CommMode::TwoSided}) {
      CAPTURE(static_cast<int>(mode));
      fabric::RankFabric fab(2, cost);
      std::vector<RankExchange> ex{RankExchange(d, 0, 8), RankExchange(d, 1, 8)};
      register_particle_regions(fab, d, ex);
      std::vector<std::vector<layout::ParticleTile>> tiles(2);
      for (int r = 0; r < 2; ++r)
        for (const Int3& t : d.tiles_of_rank(r)) tiles[static_cast<std::size_t>(r)].push_back(layout::init_tile(g, t, 1));

      ex[0].route_migrant(rec(10, 8.5e-6), {8, 0, 0}, tiles[0]);
      ex[0].route_migrant(rec(11, 15.5e-6), {15, 0, 0}, tiles[0]);  // wraps to rank 1 the other way
      CHECK(ex[0].emit(fab, mode, 0) == 0.0);
      CHECK(ex[1].emit(fab, mode, 0) == 0.0);  // header-only frame

      // Rank 0 computes for 1 s, rank 1 for 6 s before converging.
      fab.advance(0, 1.0);
      fab.advance(1, 6.0);
      const bool overlapped = mode == CommMode::TwoSided;
      double w0 = -1.0, w1 = -1.0;
      const auto in0 = ex[0].converge(fab, mode, overlapped, 0, &w0);
      const auto in1 = ex[1].converge(fab, mode, overlapped, 0, &w1);
      CHECK(in0.empty());
      REQUIRE(in1.size() == 2);
      CHECK(in1[0].id == 10);
      CHECK(in1[1].id == 11);
      if (mode == CommMode::OneSided) {
        CHECK(w0 == 3.0);  // completion 4 - 1
        CHECK(w1 == 0.0);  // landed during compute
      } else {
        CHECK(w0 == 4.0);  // 3 + 0.25 * 4
        CHECK(w1 == 1.0);
      }
      ex[1].deliver(in1, tiles[1]);
      REQUIRE(tiles[1].size() == 1);
      CHECK(tiles[1][0].inbox.size() == 2);
      CHECK_THROWS_AS(ex[0].deliver(in1, tiles[0]), OwnershipError);
    }
  }
}
