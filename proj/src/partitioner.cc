#include "posepipe/partitioner.h"

#include <algorithm>
#include <sstream>
#include <unordered_set>

#include "posepipe/error.h"

namespace posepipe {

void PartitionConfig::Validate() const {
  std::ostringstream msg;
  if (!fixed_size && !(gamma_thr >= 3.0)) {
    msg << "gamma_thr must be >= 3 (got " << gamma_thr << ")";
  } else if (!(beta_thr >= 0.0 && beta_thr < 1.0)) {
    msg << "beta_thr must lie in [0, 1) (got " << beta_thr << ")";
  } else if (n_alpha < 1) {
    msg << "n_alpha must be positive (got " << n_alpha << ")";
  } else if (n_thr < 2) {
    msg << "n_thr must be at least 2 (got " << n_thr << ")";
  } else {
    return;
  }
  throw Error(ErrorCode::kInvalidArgument, msg.str());
}

bool Block::Contains(FrameId id) const {
  return std::find(camera_ids.begin(), camera_ids.end(), id) !=
         camera_ids.end();
}

double LocalCovisibilityScore(std::span<const FrameId> members,
                              const SceneProblem& scene) {
  std::unordered_set<LandmarkId> landmarks;
  std::size_t observations = 0;
  for (const FrameId id : members) {
    for (const Observation& obs : scene.frame(id).observations) {
      landmarks.insert(obs.landmark);
      ++observations;
    }
  }
  if (landmarks.empty()) {
    throw Error(ErrorCode::kEmptyBlock, "block has no landmarks");
  }
  return static_cast<double>(observations) /
         static_cast<double>(landmarks.size());
}

double LocalCovisibilityScore(const Block& block, const SceneProblem& scene) {
  return LocalCovisibilityScore(block.camera_ids, scene);
}

double GlobalCovisibilityScore(const Frame& frame,
                               std::span<const LandmarkId> block_landmarks) {
  if (block_landmarks.empty()) {
    throw Error(ErrorCode::kEmptyBlock, "block has no landmarks");
  }
  int shared = 0;
  for (const Observation& obs : frame.observations) {
    if (std::binary_search(block_landmarks.begin(), block_landmarks.end(),
                           obs.landmark)) {
      ++shared;
    }
  }
  return static_cast<double>(shared) /
         static_cast<double>(block_landmarks.size());
}

double GlobalCovisibilityScore(const Frame& frame, const Block& block) {
  return GlobalCovisibilityScore(frame, block.landmark_ids);
}

std::vector<FrameId> RankAddInCandidates(
    std::vector<std::pair<FrameId, double>> scored,
    const PartitionConfig& config) {
  std::erase_if(scored, [&](const auto& c) { return !(c.second > config.beta_thr); });
  std::sort(scored.begin(), scored.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });
  if (scored.size() > static_cast<std::size_t>(config.n_alpha)) {
    scored.resize(config.n_alpha);
  }
  std::vector<FrameId> ids;
  ids.reserve(scored.size());
  for (const auto& c : scored) ids.push_back(c.first);
  return ids;
}

std::vector<FrameId> SelectAddedCameras(const Block& block,
                                        std::span<const Frame> history,
                                        const PartitionConfig& config) {
  if (config.fixed_size || block.landmark_ids.empty()) {
    return {};
  }
  std::vector<std::pair<FrameId, double>> scored;
  for (const Frame& frame : history) {
    if (frame.id >= block.reference_frame_id) continue;
    scored.emplace_back(frame.id,
                        GlobalCovisibilityScore(frame, block.landmark_ids));
  }
  return RankAddInCandidates(std::move(scored), config);
}

Partitioner::Partitioner(PartitionConfig config) : config_(config) {
  config_.Validate();
}

double Partitioner::OpenGamma() const {
  if (open_counts_.empty()) return 0.0;
  return static_cast<double>(open_observations_) /
         static_cast<double>(open_counts_.size());
}

void Partitioner::AddToOpen(std::size_t history_index) {
  open_.push_back(history_index);
  for (const LandmarkId lm : history_[history_index].landmarks) {
    ++open_counts_[lm];
    ++open_observations_;
  }
}

std::optional<Block> Partitioner::Ingest(const Frame& frame) {
  if (!history_.empty() && frame.id <= history_.back().id) {
    std::ostringstream msg;
    msg << "frame " << frame.id << " after frame " << history_.back().id;
    throw Error(ErrorCode::kOutOfOrderFrame, msg.str());
  }
  HistoryEntry entry{frame.id, {}};
  entry.landmarks.reserve(frame.observations.size());
  for (const Observation& obs : frame.observations) {
    entry.landmarks.push_back(obs.landmark);
  }
  std::sort(entry.landmarks.begin(), entry.landmarks.end());
  const std::size_t index = history_.size();
  for (const LandmarkId lm : entry.landmarks) {
    observers_[lm].push_back(index);
  }
  history_index_.emplace(frame.id, index);
  history_.push_back(std::move(entry));

  AddToOpen(index);
  const int size = static_cast<int>(open_.size());
  const bool dense_enough =
      !config_.fixed_size && OpenGamma() >= config_.gamma_thr;
  if (size >= 2 && (dense_enough || size >= config_.n_thr)) {
    return Seal();
  }
  return std::nullopt;
}

std::optional<Block> Partitioner::Finish() {
  if (open_.size() < 2) {
    return std::nullopt;
  }
  return Seal();
}

Block Partitioner::Seal() {
  Block block;
  block.id = next_block_id_++;
  block.num_temporal = static_cast<int>(open_.size());
  for (const std::size_t idx : open_) {
    block.camera_ids.push_back(history_[idx].id);
  }
  block.reference_frame_id = block.camera_ids.front();
  block.gamma = OpenGamma();
  block.landmark_ids.reserve(open_counts_.size());
  for (const auto& [lm, count] : open_counts_) {
    block.landmark_ids.push_back(lm);
  }
  std::sort(block.landmark_ids.begin(), block.landmark_ids.end());

  if (!config_.fixed_size) {
    // Overlap counts of every earlier frame with the block's landmarks.
    const std::size_t first_temporal = open_.front();
    std::vector<int> shared(first_temporal, 0);
    for (const LandmarkId lm : block.landmark_ids) {
      for (const std::size_t idx : observers_.at(lm)) {
        if (idx >= first_temporal) break;
        ++shared[idx];
      }
    }
    std::vector<std::pair<FrameId, double>> scored;
    const double denom = static_cast<double>(block.landmark_ids.size());
    for (std::size_t idx = 0; idx < first_temporal; ++idx) {
      if (shared[idx] > 0) {
        scored.emplace_back(history_[idx].id, shared[idx] / denom);
      }
    }
    block.added_in_ids = RankAddInCandidates(std::move(scored), config_);

    std::vector<LandmarkId> merged = block.landmark_ids;
    for (const FrameId id : block.added_in_ids) {
      block.camera_ids.push_back(id);
      const auto& extra = history_[history_index_.at(id)].landmarks;
      merged.insert(merged.end(), extra.begin(), extra.end());
    }
    std::sort(merged.begin(), merged.end());
    merged.erase(std::unique(merged.begin(), merged.end()), merged.end());
    block.landmark_ids = std::move(merged);
  }

  // The last temporal frame opens the next block as its reference frame.
  const std::size_t last = open_.back();
  open_.clear();
  open_counts_.clear();
  open_observations_ = 0;
  AddToOpen(last);
  return block;
}

}  // namespace posepipe
