#include "ilaprop/schedule.hpp"

#include <algorithm>
#include <stdexcept>

namespace ilaprop {

std::string to_string(Branch branch) { return branch == Branch::Slow ? "Slow" : "Fast"; }

namespace {

Schedule assign_sources(const std::vector<Branch>& branches, Routing routing) {
  Schedule out;
  std::optional<std::size_t> last_key;
  std::optional<std::size_t> last_non_key;
  for (std::size_t i = 0; i < branches.size(); ++i) {
    ScheduleEntry e;
    e.frame_index = i;
    e.branch = branches[i];
    if (routing == Routing::previous_frame) {
      if (i > 0) e.previous_source = i - 1;
    } else {
      e.previous_source = last_non_key;
    }
    if (e.branch == Branch::Fast) e.keyframe_source = last_key;
    out.push_back(e);
    if (e.branch == Branch::Slow) {
      last_key = i;
    } else {
      last_non_key = i;
    }
  }
  return out;
}

}  // namespace

Schedule periodic_schedule(std::size_t num_frames, std::size_t keyframe_interval,
                           Routing routing) {
  if (num_frames == 0) throw std::invalid_argument("schedule needs at least one frame");
  if (keyframe_interval == 0) throw std::invalid_argument("keyframe interval K must be >= 1");
  std::vector<Branch> branches(num_frames);
  for (std::size_t i = 0; i < num_frames; ++i) {
    branches[i] = i % keyframe_interval == 0 ? Branch::Slow : Branch::Fast;
  }
  return assign_sources(branches, routing);
}

Schedule eval_clip_schedule(std::size_t offset, std::size_t keyframe_interval, Routing routing) {
  if (keyframe_interval == 0) throw std::invalid_argument("keyframe interval K must be >= 1");
  if (offset >= keyframe_interval) {
    throw std::invalid_argument("eval clip offset " + std::to_string(offset) +
                                " outside [0, K-1] for K=" + std::to_string(keyframe_interval));
  }
  std::vector<Branch> branches(offset + 1, Branch::Fast);
  branches[0] = Branch::Slow;
  return assign_sources(branches, routing);
}

Schedule build_schedule(std::size_t num_frames, std::size_t keyframe_interval, ScheduleMode mode,
                        std::size_t offset, Routing routing) {
  if (mode == ScheduleMode::periodic) {
    return periodic_schedule(num_frames, keyframe_interval, routing);
  }
  if (num_frames != offset + 1) {
    throw std::invalid_argument("eval clip with offset " + std::to_string(offset) + " needs " +
                                std::to_string(offset + 1) + " frames, got " +
                                std::to_string(num_frames));
  }
  return eval_clip_schedule(offset, keyframe_interval, routing);
}

std::size_t count_branch(const Schedule& schedule, Branch branch) {
  return static_cast<std::size_t>(std::count_if(
      schedule.begin(), schedule.end(), [branch](const auto& e) { return e.branch == branch; }));
}

}  // namespace ilaprop
