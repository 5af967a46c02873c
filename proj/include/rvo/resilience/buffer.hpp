#pragma once

#include <cmath>
#include <deque>
#include <memory>
#include <vector>

#include "rvo/error.hpp"
#include "rvo/frame.hpp"

namespace rvo {

enum class BufferMode { rolling, extending };

/// Store of recent frame features. Rolling mode keeps the newest `capacity`
/// frames; extending mode (entered on breakage) keeps everything, so after
/// `extension_count` more frames the length is the length at breakage plus
/// that count.
class BufferQueue {
 public:
  explicit BufferQueue(std::size_t capacity) : capacity_(capacity) {
    if (capacity == 0) throw Error(ErrorCode::InvalidArgument, "buffer capacity must be positive");
  }

  /// Frames covering `seconds` of video.
  static std::size_t capacity_for(double fps, double seconds = 10.0) {
    if (!(fps > 0.0) || !(seconds > 0.0)) throw Error(ErrorCode::InvalidArgument, "fps and seconds must be positive");
    return static_cast<std::size_t>(std::max(1.0, std::round(fps * seconds)));
  }

  void push(Frame frame) {
    frames_.push_back(std::move(frame));
    if (mode_ == BufferMode::extending) {
      ++extension_;
    } else {
      while (frames_.size() > capacity_) frames_.pop_front();
    }
  }

  /// Stops eviction. Called when a breakage is declared.
  void begin_extension() {
    mode_ = BufferMode::extending;
    extension_ = 0;
    length_at_breakage_ = frames_.size();
  }

  /// Returns to rolling mode and trims the oldest frames down to capacity.
  void end_extension() {
    mode_ = BufferMode::rolling;
    extension_ = 0;
    while (frames_.size() > capacity_) frames_.pop_front();
  }

  BufferMode mode() const { return mode_; }
  std::size_t capacity() const { return capacity_; }
  std::size_t length() const { return frames_.size(); }
  std::size_t extension_count() const { return extension_; }
  std::size_t length_at_breakage() const { return length_at_breakage_; }
  bool empty() const { return frames_.empty(); }
  const Frame& oldest() const { return frames_.front(); }
  const Frame& newest() const { return frames_.back(); }
  const std::deque<Frame>& frames() const { return frames_; }

  /// Immutable copy of the contents, oldest first.
  std::shared_ptr<const std::vector<Frame>> snapshot() const {
    return std::make_shared<const std::vector<Frame>>(frames_.begin(), frames_.end());
  }

 private:
  std::size_t capacity_;
  std::deque<Frame> frames_;
  BufferMode mode_ = BufferMode::rolling;
  std::size_t extension_ = 0;
  std::size_t length_at_breakage_ = 0;
};

}  // namespace rvo
