#pragma once

#include <optional>
#include <span>
#include <unordered_map>
#include <utility>
#include <vector>

#include "posepipe/scene.h"

namespace posepipe {

struct PartitionConfig {
  // A block seals once its local co-visibility score reaches gamma_thr...
  double gamma_thr = 10.0;
  // ...or once it holds n_thr temporal frames.
  int n_thr = 50;
  // Earlier frames whose overlap ratio with the sealed block exceeds
  // beta_thr are added in, at most n_alpha of them.
  double beta_thr = 0.15;
  int n_alpha = 10;
  // Conventional partitioning: fixed n_thr-frame blocks, no add-ins.
  bool fixed_size = false;

  void Validate() const;
};

struct Block {
  int id = 0;
  // Temporal members (in capture order) followed by added-in members.
  std::vector<FrameId> camera_ids;
  int num_temporal = 0;
  std::vector<FrameId> added_in_ids;
  // Union of all members' visible landmarks, sorted.
  std::vector<LandmarkId> landmark_ids;
  FrameId reference_frame_id = -1;
  // Local co-visibility of the temporal members at sealing time.
  double gamma = 0.0;

  std::span<const FrameId> TemporalIds() const {
    return std::span<const FrameId>(camera_ids.data(), num_temporal);
  }
  FrameId LastTemporalId() const { return camera_ids[num_temporal - 1]; }
  bool Contains(FrameId id) const;
};

// Average number of member frames observing each landmark in the members'
// landmark union. Throws kEmptyBlock when the union is empty.
double LocalCovisibilityScore(std::span<const FrameId> members,
                              const SceneProblem& scene);
double LocalCovisibilityScore(const Block& block, const SceneProblem& scene);

// Fraction of the block's landmarks visible in `frame`. `block_landmarks`
// must be sorted. Throws kEmptyBlock when it is empty.
double GlobalCovisibilityScore(const Frame& frame,
                               std::span<const LandmarkId> block_landmarks);
double GlobalCovisibilityScore(const Frame& frame, const Block& block);

// Keeps candidates with score > beta_thr, ordered by descending score then
// ascending frame id, truncated to n_alpha.
std::vector<FrameId> RankAddInCandidates(
    std::vector<std::pair<FrameId, double>> scored,
    const PartitionConfig& config);

// Add-in selection for a temporally sealed block against every earlier
// frame in `history` (frames inside the block's temporal range are skipped).
std::vector<FrameId> SelectAddedCameras(const Block& block,
                                        std::span<const Frame> history,
                                        const PartitionConfig& config);

// Online partitioning of a frame stream into co-visibility blocks.
// Single-owner; emitted blocks are plain values.
class Partitioner {
 public:
  explicit Partitioner(PartitionConfig config);

  // Appends the frame to the open block. Returns the block if it sealed.
  // Throws kOutOfOrderFrame if ids do not strictly increase.
  std::optional<Block> Ingest(const Frame& frame);
  // Seals the trailing block if it has at least two temporal frames.
  std::optional<Block> Finish();

  const PartitionConfig& config() const { return config_; }
  int NumOpenFrames() const { return static_cast<int>(open_.size()); }
  // Local co-visibility of the open block (0 when it has no landmarks).
  double OpenGamma() const;

 private:
  struct HistoryEntry {
    FrameId id;
    std::vector<LandmarkId> landmarks;
  };

  void AddToOpen(std::size_t history_index);
  Block Seal();

  PartitionConfig config_;
  std::vector<HistoryEntry> history_;
  std::unordered_map<FrameId, std::size_t> history_index_;
  // landmark -> history indices observing it, increasing.
  std::unordered_map<LandmarkId, std::vector<std::size_t>> observers_;

  std::vector<std::size_t> open_;
  std::unordered_map<LandmarkId, int> open_counts_;
  long long open_observations_ = 0;
  int next_block_id_ = 0;
};

}  // namespace posepipe
