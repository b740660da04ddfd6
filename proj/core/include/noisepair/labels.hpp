#pragma once

#include <optional>
#include <string>
#include <string_view>

namespace noisepair {

enum class Audibility { clear, faint, not_heard };
enum class Origin { source, interferer };

const char* to_string(Audibility a);
Audibility audibility_from_string(std::string_view s);
const char* to_string(Origin o);
Origin origin_from_string(std::string_view s);

// A labelled event span [start_s, end_s) on one device clock. Only `clear`
// counts as a positive event; faint and not_heard collapse to absence.
struct EventLabel {
  double start_s = 0.0;
  double end_s = 0.0;
  std::optional<Audibility> audibility;
  Origin origin = Origin::source;

  EventLabel() = default;
  EventLabel(double start, double end, std::optional<Audibility> a = std::nullopt,
             Origin o = Origin::source);

  bool binary() const { return audibility == Audibility::clear; }
  bool overlaps(double a, double b) const { return start_s < b && a < end_s; }

  friend bool operator==(const EventLabel&, const EventLabel&) = default;
};

// Ground truth for one event as seen by a source/receiver pair. `label` is
// on the source (wall) clock; the receiver span is on the receiver clock and
// includes propagation delay and clock offset. Interferers only exist at the
// receiver; their `label` holds the receiver wall-clock span.
struct TruthEvent {
  EventLabel label;
  double receiver_start_s = 0.0;
  double receiver_end_s = 0.0;

  bool heard_source_event() const { return label.origin == Origin::source && label.binary(); }
};

}  // namespace noisepair
