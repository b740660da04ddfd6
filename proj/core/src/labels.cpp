#include "noisepair/labels.hpp"

#include <string>

#include "noisepair/error.hpp"

namespace noisepair {

const char* to_string(Audibility a) {
  switch (a) {
    case Audibility::clear: return "clear";
    case Audibility::faint: return "faint";
    case Audibility::not_heard: return "not_heard";
  }
  return "?";
}

Audibility audibility_from_string(std::string_view s) {
  if (s == "clear") return Audibility::clear;
  if (s == "faint") return Audibility::faint;
  if (s == "not_heard") return Audibility::not_heard;
  throw Error("unknown audibility: " + std::string(s));
}

const char* to_string(Origin o) { return o == Origin::source ? "source" : "interferer"; }

Origin origin_from_string(std::string_view s) {
  if (s == "source") return Origin::source;
  if (s == "interferer") return Origin::interferer;
  throw Error("unknown origin: " + std::string(s));
}

EventLabel::EventLabel(double start, double end, std::optional<Audibility> a, Origin o)
    : start_s(start), end_s(end), audibility(a), origin(o) {
  if (!(end_s > start_s)) throw Error("invalid event span");
}

}  // namespace noisepair
