#pragma once

#include <vector>

#include "procap/frame.hpp"

namespace procap {

enum class ProcedureSource { blend, oracle };

// The l interior frames between a pair, ordered by timestamp in (0,1).
struct PseudoFrameSequence {
  std::vector<Frame> frames;
  std::vector<double> timestamps;
  ProcedureSource source = ProcedureSource::blend;

  std::size_t size() const { return frames.size(); }
};

// Endpoints plus k sampled keyframes in temporal order.
struct KeyframeProcedure {
  std::vector<Frame> frames;            // k + 2
  std::vector<int> sampled_indices;     // k, strictly increasing, into the pseudo sequence

  int keyframes() const { return static_cast<int>(sampled_indices.size()); }
};

}  // namespace procap
