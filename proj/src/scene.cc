#include "posepipe/scene.h"

#include <algorithm>
#include <sstream>

#include "posepipe/error.h"

namespace posepipe {

SceneProblem::SceneProblem(Intrinsics intrinsics, std::vector<Frame> frames,
                           std::vector<Landmark> landmarks,
                           std::vector<Pose> poses,
                           std::optional<GroundTruth> ground_truth)
    : intrinsics_(intrinsics),
      frames_(std::move(frames)),
      landmarks_(std::move(landmarks)),
      poses_(std::move(poses)),
      ground_truth_(std::move(ground_truth)) {
  intrinsics_.Validate();
  if (frames_.size() < 2) {
    throw Error(ErrorCode::kInvalidArgument,
                "a scene needs at least two frames");
  }
  if (poses_.size() != frames_.size()) {
    throw Error(ErrorCode::kInvalidArgument,
                "pose count does not match frame count");
  }
  for (std::size_t i = 0; i < landmarks_.size(); ++i) {
    if (landmarks_[i].id != static_cast<LandmarkId>(i)) {
      throw Error(ErrorCode::kInvalidArgument, "landmark ids must be dense");
    }
  }
  const int n = static_cast<int>(landmarks_.size());
  std::vector<std::size_t> counts(n + 1, 0);
  for (std::size_t i = 0; i < frames_.size(); ++i) {
    Frame& frame = frames_[i];
    if (frame.id != static_cast<FrameId>(i)) {
      throw Error(ErrorCode::kInvalidArgument, "frame ids must be dense");
    }
    std::sort(frame.observations.begin(), frame.observations.end(),
              [](const Observation& a, const Observation& b) {
                return a.landmark < b.landmark;
              });
    for (std::size_t k = 0; k < frame.observations.size(); ++k) {
      const LandmarkId lm = frame.observations[k].landmark;
      if (lm < 0 || lm >= n) {
        std::ostringstream msg;
        msg << "frame " << frame.id << " references landmark " << lm
            << " (have " << n << ")";
        throw Error(ErrorCode::kIndexOutOfRange, msg.str());
      }
      if (k > 0 && frame.observations[k - 1].landmark == lm) {
        std::ostringstream msg;
        msg << "frame " << frame.id << " observes landmark " << lm
            << " twice";
        throw Error(ErrorCode::kInvalidArgument, msg.str());
      }
      ++counts[lm + 1];
    }
  }
  if (ground_truth_ && (ground_truth_->poses.size() != frames_.size() ||
                        ground_truth_->landmarks.size() != landmarks_.size())) {
    throw Error(ErrorCode::kInvalidArgument,
                "ground truth does not match scene dimensions");
  }

  observer_offsets_.assign(n + 1, 0);
  for (int j = 0; j < n; ++j) {
    observer_offsets_[j + 1] = observer_offsets_[j] + counts[j + 1];
  }
  observer_ids_.resize(observer_offsets_[n]);
  std::vector<std::size_t> cursor(observer_offsets_.begin(),
                                  observer_offsets_.end() - 1);
  for (const Frame& frame : frames_) {
    for (const Observation& obs : frame.observations) {
      observer_ids_[cursor[obs.landmark]++] = frame.id;
    }
  }
}

std::size_t SceneProblem::NumObservations() const {
  return observer_ids_.size();
}

std::span<const FrameId> SceneProblem::Observers(LandmarkId id) const {
  const std::size_t begin = observer_offsets_.at(id);
  const std::size_t end = observer_offsets_.at(id + 1);
  return std::span<const FrameId>(observer_ids_.data() + begin, end - begin);
}

int CovisibleCount(const Frame& a, const Frame& b) {
  int count = 0;
  auto it_a = a.observations.begin();
  auto it_b = b.observations.begin();
  while (it_a != a.observations.end() && it_b != b.observations.end()) {
    if (it_a->landmark < it_b->landmark) {
      ++it_a;
    } else if (it_b->landmark < it_a->landmark) {
      ++it_b;
    } else {
      ++count;
      ++it_a;
      ++it_b;
    }
  }
  return count;
}

double TotalReprojectionCost(const SceneProblem& scene,
                             std::span<const Pose> poses,
                             std::span<const Eigen::Vector3d> landmarks,
                             std::size_t* num_skipped) {
  double cost = 0.0;
  std::size_t skipped = 0;
  for (const Frame& frame : scene.frames()) {
    const Pose& pose = poses[frame.id];
    for (const Observation& obs : frame.observations) {
      const auto pixel =
          TryProject(scene.intrinsics(), pose, landmarks[obs.landmark]);
      if (!pixel) {
        ++skipped;
        continue;
      }
      cost += (*pixel - obs.pixel).squaredNorm();
    }
  }
  if (num_skipped != nullptr) {
    *num_skipped = skipped;
  }
  return cost;
}

}  // namespace posepipe
