#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <vector>

namespace ilaprop {

enum class Branch { Slow, Fast };

std::string to_string(Branch branch);

/// Which earlier frame feeds the second propagation edge.
enum class Routing {
  /// The immediately preceding frame, whatever its branch.
  previous_frame,
  /// The most recent non-keyframe.
  last_non_keyframe,
};

struct ScheduleEntry {
  std::size_t frame_index = 0;
  Branch branch = Branch::Slow;
  std::optional<std::size_t> keyframe_source;
  std::optional<std::size_t> previous_source;

  bool operator==(const ScheduleEntry&) const = default;
};

using Schedule = std::vector<ScheduleEntry>;

/// Frame i is a keyframe iff i % K == 0.
Schedule periodic_schedule(std::size_t num_frames, std::size_t keyframe_interval,
                           Routing routing = Routing::previous_frame);

/// Offset-d evaluation clip: frame 0 is the keyframe, frames 1..d run Fast and
/// frame d is the evaluated frame. Requires d < K.
Schedule eval_clip_schedule(std::size_t offset, std::size_t keyframe_interval,
                            Routing routing = Routing::previous_frame);

enum class ScheduleMode { periodic, eval_clip };

/// Dispatching form: for eval_clip, num_frames must equal offset + 1.
Schedule build_schedule(std::size_t num_frames, std::size_t keyframe_interval, ScheduleMode mode,
                        std::size_t offset = 0, Routing routing = Routing::previous_frame);

std::size_t count_branch(const Schedule& schedule, Branch branch);

}  // namespace ilaprop
