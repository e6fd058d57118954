#include <algorithm>
#include <numbers>
#include <random>
#include <set>

#include <gtest/gtest.h>

#include "posepipe/error.h"
#include "posepipe/evaluation.h"
#include "posepipe/global_align.h"
#include "test_util.h"

namespace posepipe {
namespace {

using testing::RandomRotation;
using testing::RandomUnitVector;
using testing::RandomVector;

constexpr double kDeg = std::numbers::pi / 180.0;

Rotation3 RotZ(double angle) {
  return Rotation3::FromAngleAxis(angle, Eigen::Vector3d::UnitZ());
}

Rotation3 Perturb(std::mt19937_64& rng, const Rotation3& r, double angle) {
  return ExpMap(angle * RandomUnitVector(rng)) * r;
}

// Block `id` whose reference frame has world rotation `reference`; cameras
// get the given world rotations and centers.
LocalSolution MakeSolution(int id, const Rotation3& reference,
                           const std::vector<FrameId>& frames,
                           const std::vector<Rotation3>& world_rotations) {
  LocalSolution sol;
  sol.block_id = id;
  sol.reference_frame_id = frames.front();
  sol.camera_ids = frames;
  for (const Rotation3& w : world_rotations) {
    sol.poses.emplace_back(w * reference.Inverse(), Eigen::Vector3d::Zero());
  }
  return sol;
}

std::vector<const LocalSolution*> Pointers(const std::vector<LocalSolution>& v) {
  std::vector<const LocalSolution*> out;
  for (const auto& s : v) out.push_back(&s);
  return out;
}

// ---------------------------------------------------------------------------

TEST(CollectShared, BoundaryFrameOnly) {
  const std::vector<Rotation3> r(3);
  const LocalSolution a = MakeSolution(0, {}, {0, 1, 2}, r);
  const LocalSolution b = MakeSolution(1, {}, {2, 3, 4}, r);
  const auto shared = CollectShared(a, b);
  ASSERT_TRUE(shared.has_value());
  EXPECT_EQ(shared->camera_ids, std::vector<FrameId>{2});
  EXPECT_EQ(shared->block_a, 0);
  EXPECT_EQ(shared->block_b, 1);
}

TEST(CollectShared, DisjointPairOmitted) {
  const std::vector<Rotation3> r(2);
  const std::vector<LocalSolution> sols = {MakeSolution(0, {}, {0, 1}, r),
                                           MakeSolution(1, {}, {1, 2}, r),
                                           MakeSolution(2, {}, {2, 3}, r)};
  const auto ptrs = Pointers(sols);
  const auto sets = CollectShared(ptrs);
  ASSERT_EQ(sets.size(), 2u);
  EXPECT_EQ(sets[0].block_a, 0);
  EXPECT_EQ(sets[1].block_a, 1);
}

TEST(CollectShared, MatchesBruteForceIntersection) {
  std::mt19937_64 rng(1);
  std::bernoulli_distribution member(0.3);
  for (int trial = 0; trial < 30; ++trial) {
    std::vector<LocalSolution> sols;
    std::vector<std::set<FrameId>> members;
    for (int l = 0; l < 6; ++l) {
      std::set<FrameId> ids;
      for (FrameId f = 0; f < 20; ++f) {
        if (member(rng)) ids.insert(f);
      }
      ids.insert(l);  // never empty
      members.push_back(ids);
      std::vector<FrameId> frames(ids.begin(), ids.end());
      std::shuffle(frames.begin(), frames.end(), rng);
      sols.push_back(MakeSolution(l, {}, frames,
                                  std::vector<Rotation3>(frames.size())));
    }
    const auto ptrs = Pointers(sols);
    const auto sets = CollectShared(ptrs);
    std::size_t k = 0;
    for (int a = 0; a < 6; ++a) {
      for (int b = a + 1; b < 6; ++b) {
        std::vector<FrameId> both;
        std::set_intersection(members[a].begin(), members[a].end(),
                              members[b].begin(), members[b].end(),
                              std::back_inserter(both));
        if (both.empty()) continue;
        ASSERT_LT(k, sets.size());
        EXPECT_EQ(sets[k].block_a, a);
        EXPECT_EQ(sets[k].block_b, b);
        EXPECT_EQ(sets[k].camera_ids, both);
        ++k;
      }
    }
    EXPECT_EQ(k, sets.size());
  }
}

// ---------------------------------------------------------------------------

TEST(SingleRotationAverage, IdenticalMeasurements) {
  std::mt19937_64 rng(2);
  const Rotation3 r = RandomRotation(rng);
  const std::vector<Rotation3> m(5, r);
  const RotationMean mean = SingleRotationAverage(m);
  EXPECT_LT(GeodesicDistance(mean.rotation, r), 1e-12);
  EXPECT_TRUE(mean.converged);
}

TEST(SingleRotationAverage, SingleAxisMidpoint) {
  const std::vector<Rotation3> m = {RotZ(0.0), RotZ(0.8)};
  EXPECT_LT(GeodesicDistance(SingleRotationAverage(m).rotation, RotZ(0.4)),
            1e-12);
}

TEST(SingleRotationAverage, EmptyThrows) {
  try {
    SingleRotationAverage({});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kEmptyMeasurements);
  }
}

// Best objective over n samples: half uniform on SO(3), half local
// perturbations of the measurements.
double RandomSearchOracle(std::mt19937_64& rng,
                          const std::vector<Rotation3>& m, int n) {
  std::uniform_int_distribution<std::size_t> pick(0, m.size() - 1);
  std::uniform_real_distribution<double> spread(0.0, 0.3);
  double best = std::numeric_limits<double>::infinity();
  for (int s = 0; s < n; ++s) {
    const Rotation3 candidate =
        s % 2 == 0 ? RandomRotation(rng)
                   : Perturb(rng, m[pick(rng)], spread(rng));
    best = std::min(best, RotationCost(m, candidate));
  }
  return best;
}

TEST(SingleRotationAverage, NoWorseThanRandomSearch) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> angle(0.0, 0.3);
  for (int instance = 0; instance < 20; ++instance) {
    const Rotation3 base = RandomRotation(rng);
    std::vector<Rotation3> m;
    for (int i = 0; i < 10; ++i) m.push_back(Perturb(rng, base, angle(rng)));
    const double ours = RotationCost(m, SingleRotationAverage(m).rotation);
    const double oracle = RandomSearchOracle(rng, m, 50000);
    EXPECT_LE(ours, oracle + 1e-6) << "instance " << instance;
  }
}

TEST(SingleRotationAverage, RightEquivariance) {
  std::mt19937_64 rng(4);
  for (int trial = 0; trial < 100; ++trial) {
    const Rotation3 base = RandomRotation(rng);
    std::vector<Rotation3> m, shifted;
    const Rotation3 z = RandomRotation(rng);
    for (int i = 0; i < 7; ++i) {
      m.push_back(Perturb(rng, base, 0.4));
      shifted.push_back(m.back() * z);
    }
    const Rotation3 a = SingleRotationAverage(m).rotation * z;
    const Rotation3 b = SingleRotationAverage(shifted).rotation;
    EXPECT_LT(GeodesicDistance(a, b), 1e-10);
  }
}

TEST(SingleRotationAverage, MoreCentralThanEveryMeasurement) {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 200; ++trial) {
    const Rotation3 base = RandomRotation(rng);
    std::vector<Rotation3> m;
    for (int i = 0; i < 2 + trial % 9; ++i) m.push_back(Perturb(rng, base, 0.7));
    const double ours = RotationCost(m, SingleRotationAverage(m).rotation);
    for (const Rotation3& r : m) EXPECT_LE(ours, RotationCost(m, r) + 1e-12);
  }
}

TEST(SingleRotationAverage, StationaryPoint) {
  std::mt19937_64 rng(6);
  for (int trial = 0; trial < 100; ++trial) {
    const Rotation3 base = RandomRotation(rng);
    std::vector<Rotation3> m;
    for (int i = 0; i < 6; ++i) m.push_back(Perturb(rng, base, 0.5));
    const Rotation3 mean = SingleRotationAverage(m).rotation;
    Eigen::Vector3d gradient = Eigen::Vector3d::Zero();
    for (const Rotation3& r : m) gradient += LogMap(mean.Inverse() * r);
    EXPECT_LT(gradient.norm(), 1e-9);
  }
}

// ---------------------------------------------------------------------------

SharedCameraSet PairWithOffset(std::mt19937_64& rng, const Rotation3& ref_a,
                               const Rotation3& ref_b, int cameras,
                               double noise) {
  SharedCameraSet shared;
  shared.block_a = 0;
  shared.block_b = 1;
  for (int i = 0; i < cameras; ++i) {
    const Rotation3 world = RandomRotation(rng);
    shared.camera_ids.push_back(i);
    shared.poses_a.emplace_back(
        Perturb(rng, world * ref_a.Inverse(), noise), Eigen::Vector3d::Zero());
    shared.poses_b.emplace_back(
        Perturb(rng, world * ref_b.Inverse(), noise), Eigen::Vector3d::Zero());
  }
  return shared;
}

TEST(AlignPair, ConsistentBlocksGiveIdentity) {
  std::mt19937_64 rng(7);
  const Rotation3 ref = RandomRotation(rng);
  const SharedCameraSet shared = PairWithOffset(rng, ref, ref, 4, 0.0);
  EXPECT_LT(AlignPair(shared).rotation.Angle(), 1e-12);
}

TEST(AlignPair, RecoversKnownOffset) {
  std::mt19937_64 rng(8);
  for (int trial = 0; trial < 100; ++trial) {
    const Rotation3 ref_a = RandomRotation(rng);
    const Rotation3 ref_b = RandomRotation(rng);
    const Rotation3 expected = ref_b * ref_a.Inverse();
    const SharedCameraSet shared = PairWithOffset(rng, ref_a, ref_b, 5, 0.0);
    EXPECT_LT(GeodesicDistance(AlignPair(shared).rotation, expected), 1e-9);
  }
}

TEST(AlignPair, AveragingBeatsSingleMeasurement) {
  std::mt19937_64 rng(9);
  int better = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const Rotation3 ref_a = RandomRotation(rng);
    const Rotation3 ref_b = RandomRotation(rng);
    const Rotation3 expected = ref_b * ref_a.Inverse();
    const SharedCameraSet shared = PairWithOffset(rng, ref_a, ref_b, 10, kDeg);
    const Rotation3 single = shared.poses_b[0].rotation().Inverse() *
                             shared.poses_a[0].rotation();
    better += GeodesicDistance(AlignPair(shared).rotation, expected) <
              GeodesicDistance(single, expected);
  }
  EXPECT_GE(better, 90);
}

// ---------------------------------------------------------------------------

// Blocks 0..n-1 in a ring: block l shares frame l with block l-1 (and
// block 0 shares frame n with block n-1).
std::vector<LocalSolution> RingBlocks(std::mt19937_64& rng,
                                      const std::vector<Rotation3>& refs,
                                      std::vector<Rotation3>* world) {
  const int n = static_cast<int>(refs.size());
  world->clear();
  for (int f = 0; f <= n; ++f) world->push_back(RandomRotation(rng));
  std::vector<LocalSolution> sols;
  for (int l = 0; l < n; ++l) {
    std::vector<FrameId> frames = {l, l + 1};
    if (l == n - 1) frames.push_back(0);
    std::vector<Rotation3> rot;
    for (const FrameId f : frames) rot.push_back((*world)[f]);
    sols.push_back(MakeSolution(l, refs[l], frames, rot));
  }
  return sols;
}

TEST(BlockRotationGraph, TwoBlocksReduceToAlignPair) {
  std::mt19937_64 rng(10);
  const std::vector<Rotation3> refs = {RandomRotation(rng), RandomRotation(rng)};
  std::vector<Rotation3> world;
  const std::vector<LocalSolution> sols = RingBlocks(rng, refs, &world);
  BlockRotationGraph graph;
  graph.Update(sols[0], {});
  const auto shared = CollectShared(sols[0], sols[1]);
  const std::vector<SharedCameraSet> sets = {*shared};
  graph.Update(sols[1], sets);
  const auto rotations = graph.Snapshot();
  EXPECT_EQ(rotations[0].Angle(), 0.0);
  EXPECT_LT(GeodesicDistance(rotations[1], AlignPair(*shared).rotation), 1e-12);
}

std::vector<Rotation3> RunGraph(BlockRotationGraph& graph,
                                const std::vector<LocalSolution>& sols,
                                std::vector<GlobalUpdateStats>* stats = nullptr) {
  for (std::size_t l = 0; l < sols.size(); ++l) {
    std::vector<SharedCameraSet> sets;
    for (std::size_t k = 0; k < l; ++k) {
      if (auto s = CollectShared(sols[k], sols[l])) sets.push_back(*s);
    }
    const auto st = graph.Update(sols[l], sets);
    if (stats) stats->push_back(st);
  }
  return graph.Snapshot();
}

TEST(BlockRotationGraph, ConsistentLoopRecoversTruth) {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<Rotation3> refs;
    for (int l = 0; l < 4; ++l) refs.push_back(RandomRotation(rng));
    std::vector<Rotation3> world;
    const auto sols = RingBlocks(rng, refs, &world);
    BlockRotationGraph graph;
    const auto rotations = RunGraph(graph, sols);
    for (int l = 0; l < 4; ++l) {
      EXPECT_LT(GeodesicDistance(rotations[l], refs[l] * refs[0].Inverse()),
                1e-8);
    }
    for (const auto& [key, r] : graph.Edges()) {
      EXPECT_LT(GeodesicDistance(r, rotations[key.second] *
                                        rotations[key.first].Inverse()),
                1e-8);
    }
  }
}

TEST(BlockRotationGraph, PerturbedEdgeSpreadsCycleError) {
  std::mt19937_64 rng(12);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<Rotation3> refs;
    for (int l = 0; l < 4; ++l) refs.push_back(RandomRotation(rng));
    std::vector<Rotation3> world;
    auto sols = RingBlocks(rng, refs, &world);
    // Corrupt block 2's view of the frame it shares with block 1.
    sols[2].poses[0] = Pose(ExpMap(2.0 * kDeg * RandomUnitVector(rng)) *
                                sols[2].poses[0].rotation(),
                            Eigen::Vector3d::Zero());
    BlockRotationGraph graph({.full_sweep = true});
    std::vector<GlobalUpdateStats> stats;
    const auto rotations = RunGraph(graph, sols, &stats);
    double worst = 0.0;
    for (int l = 0; l < 4; ++l) {
      worst = std::max(worst, GeodesicDistance(rotations[l],
                                               refs[l] * refs[0].Inverse()));
    }
    EXPECT_LT(worst, 2.0 * kDeg);
    EXPECT_GT(worst, 0.0);
    for (const auto& st : stats) {
      for (std::size_t k = 1; k < st.edge_cost.size(); ++k) {
        EXPECT_LE(st.edge_cost[k], st.edge_cost[k - 1] + 1e-15);
      }
    }
  }
}

TEST(BlockRotationGraph, DisconnectedBlockThrows) {
  const std::vector<Rotation3> r(2);
  BlockRotationGraph graph;
  graph.Update(MakeSolution(0, {}, {0, 1}, r), {});
  try {
    graph.Update(MakeSolution(1, {}, {5, 6}, r), {});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kDisconnectedBlock);
  }
}

TEST(BlockRotationGraph, NeighbourSweepTouchesOnlyNeighbours) {
  std::mt19937_64 rng(13);
  std::vector<Rotation3> refs;
  for (int l = 0; l < 8; ++l) refs.push_back(RandomRotation(rng));
  std::vector<Rotation3> world;
  const auto sols = RingBlocks(rng, refs, &world);
  BlockRotationGraph graph;
  std::vector<GlobalUpdateStats> stats;
  RunGraph(graph, sols, &stats);
  EXPECT_EQ(stats[1].blocks_touched, 1);  // block 0 is pinned
  for (int l = 2; l < 8; ++l) EXPECT_EQ(stats[l].blocks_touched, 2);
  BlockRotationGraph full({.full_sweep = true});
  std::vector<GlobalUpdateStats> full_stats;
  RunGraph(full, sols, &full_stats);
  EXPECT_EQ(full_stats[7].blocks_touched, 7);
}

// ---------------------------------------------------------------------------

TEST(ComposeTrajectory, SingleBlockIsTheLocalSolution) {
  std::mt19937_64 rng(14);
  LocalSolution sol;
  sol.block_id = 0;
  sol.camera_ids = {0, 1, 2};
  sol.poses = {Pose::Identity(), testing::RandomPose(rng),
               testing::RandomPose(rng)};
  const std::vector<const LocalSolution*> ptrs = {&sol};
  const std::vector<Rotation3> rotations(1);
  const ComposedTrajectory out = ComposeTrajectory(ptrs, rotations, 3);
  for (int i = 0; i < 3; ++i) {
    ASSERT_TRUE(out.poses[i].has_value());
    EXPECT_LT((out.poses[i]->Matrix() - sol.poses[i].Matrix()).norm(), 1e-12);
  }
}

TEST(ComposeTrajectory, SharedFrameTakesLowestBlock) {
  std::mt19937_64 rng(15);
  std::vector<LocalSolution> sols(3);
  for (int l = 0; l < 3; ++l) {
    sols[l].block_id = l;
    sols[l].camera_ids = {l, 3};
    sols[l].poses = {Pose::Identity(), testing::RandomPose(rng)};
  }
  const std::vector<Rotation3> rotations(3);
  auto ptrs = Pointers(sols);
  const ComposedTrajectory a = ComposeTrajectory(ptrs, rotations, 4);
  std::reverse(ptrs.begin(), ptrs.end());
  const ComposedTrajectory b = ComposeTrajectory(ptrs, rotations, 4);
  EXPECT_EQ(a.poses[3]->Matrix(), b.poses[3]->Matrix());
  EXPECT_LT(GeodesicDistance(a.poses[3]->rotation(), sols[0].poses[1].rotation()),
            1e-15);
}

TEST(ComposeTrajectory, RecoversSimilarityFromTwoSharedCenters) {
  std::mt19937_64 rng(16);
  std::vector<Pose> world;
  for (int i = 0; i < 6; ++i) world.push_back(testing::RandomPose(rng, 3.0));
  // Block 0 = frames 0..3 in frame 0's coordinates; block 1 = frames 2..5
  // in frame 2's coordinates at half scale.
  auto local = [&](FrameId ref, FrameId f, double s) {
    const Pose rel = world[f] * world[ref].Inverse();
    return Pose(rel.rotation(), s * rel.translation());
  };
  std::vector<LocalSolution> sols(2);
  sols[0].block_id = 0;
  sols[1].block_id = 1;
  for (FrameId f = 0; f < 4; ++f) {
    sols[0].camera_ids.push_back(f);
    sols[0].poses.push_back(local(0, f, 1.0));
  }
  for (FrameId f = 2; f < 6; ++f) {
    sols[1].camera_ids.push_back(f);
    sols[1].poses.push_back(local(2, f, 0.5));
  }
  const std::vector<Rotation3> rotations = {
      Rotation3::Identity(),
      world[2].rotation() * world[0].rotation().Inverse()};
  const auto ptrs = Pointers(sols);
  const ComposedTrajectory out = ComposeTrajectory(ptrs, rotations, 6);
  EXPECT_NEAR(out.scales[1], 2.0, 1e-12);
  for (int f = 0; f < 6; ++f) {
    const Pose expected = local(0, f, 1.0);
    EXPECT_LT((out.poses[f]->Matrix() - expected.Matrix()).norm(), 1e-10) << f;
  }
}

TEST(ComposeTrajectory, NoiselessMultiBlockSceneMatchesTruth) {
  SynthConfig config;
  config.num_frames = 120;
  config.num_landmarks = 500;
  config.seed = 17;
  const SceneProblem scene = GenerateSynthetic(config);
  Partitioner partitioner({});
  std::vector<Block> blocks;
  for (const Frame& f : scene.frames()) {
    if (auto b = partitioner.Ingest(f)) blocks.push_back(*b);
  }
  if (auto b = partitioner.Finish()) blocks.push_back(*b);
  ASSERT_GE(blocks.size(), 3u);
  SolutionHistory history;
  LocalBaConfig lconf;
  lconf.solver.max_iterations = 200;
  BlockRotationGraph graph;
  std::vector<LocalSolution> sols;
  for (const Block& block : blocks) {
    history.AddBlock(block);
    const SpanningForest forest =
        BuildMsf(BuildPoseGraph(block, scene), block, lconf.cov_thr);
    sols.push_back(SolveLocal(
        block, scene, InitializeBlock(block, forest, scene, history, lconf),
        lconf));
    history.Publish(block, std::make_shared<LocalSolution>(sols.back()));
    std::vector<SharedCameraSet> sets;
    for (std::size_t k = 0; k + 1 < sols.size(); ++k) {
      if (auto s = CollectShared(sols[k], sols.back())) sets.push_back(*s);
    }
    graph.Update(sols.back(), sets);
  }
  const auto ptrs = Pointers(sols);
  const auto rotations = graph.Snapshot();
  const ComposedTrajectory out =
      ComposeTrajectory(ptrs, rotations, scene.NumFrames());
  const AteResult ate =
      AbsoluteTrajectoryError(out.poses, scene.ground_truth()->poses);
  EXPECT_LT(ate.rmse, 1e-8);
}

}  // namespace
}  // namespace posepipe
