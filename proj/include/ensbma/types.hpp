#ifndef ENSBMA_TYPES_HPP
#define ENSBMA_TYPES_HPP

#include <array>
#include <cstdio>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "ensbma/date.hpp"

namespace ensbma {

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Ingestion problems: I/O failure, schema mismatch, duplicate (date, station)
/// keys, out-of-range values. Messages carry row-level diagnostics.
struct DataError : Error {
  using Error::Error;
};
struct EmptyInputError : Error {
  using Error::Error;
};
struct BracketError : Error {
  using Error::Error;
};
struct IntervalError : Error {
  using Error::Error;
};
struct ValueError : Error {
  using Error::Error;
};

inline constexpr int kPerturbedMembers = 10;
inline constexpr int kEnsembleMembers = kPerturbedMembers + 1;

/// Member slot naming as used in file headers. Slot 0 is the control member
/// ("fc"), slots 1..10 are the perturbed members ("f01".."f10"); odd slots
/// carry positive perturbations, even slots negative ones.
inline std::string slot_name(int slot) {
  if (slot == 0)
    return "fc";
  char buf[8];
  std::snprintf(buf, sizeof(buf), "f%02d", slot);
  return buf;
}

enum class BiasMode { Linear, Additive, None };

inline std::string_view bias_mode_name(BiasMode m) {
  switch (m) {
    case BiasMode::Linear: return "linear";
    case BiasMode::Additive: return "additive";
    case BiasMode::None: return "none";
  }
  return "?";
}

inline std::optional<BiasMode> parse_bias_mode(std::string_view s) {
  if (s == "linear") return BiasMode::Linear;
  if (s == "additive") return BiasMode::Additive;
  if (s == "none") return BiasMode::None;
  return std::nullopt;
}

/// One (date, station) record: verifying observation plus the labeled
/// ensemble member values, all in Kelvin. Any field may be missing.
struct ForecastCase {
  Date date;
  std::string station_id;
  std::optional<double> observation;
  std::optional<double> control;
  std::array<std::optional<double>, kPerturbedMembers> perturbed;

  const std::optional<double>& member(int slot) const {
    return slot == 0 ? control : perturbed[size_t(slot - 1)];
  }
  std::optional<double>& member(int slot) {
    return slot == 0 ? control : perturbed[size_t(slot - 1)];
  }

  /// True when no forecast value is present at all; such cases are excluded
  /// from training and scoring.
  bool empty() const { return present_members() == 0; }

  int present_members() const {
    int n = control.has_value() ? 1 : 0;
    for (const auto& p : perturbed)
      if (p.has_value()) ++n;
    return n;
  }

  std::vector<double> present_values() const {
    std::vector<double> v;
    v.reserve(kEnsembleMembers);
    for (int s = 0; s < kEnsembleMembers; ++s)
      if (member(s).has_value()) v.push_back(*member(s));
    return v;
  }

  bool operator==(const ForecastCase&) const = default;
};

enum class SchemeVariant { TwoGroup, ThreeGroup };

inline std::string_view scheme_variant_name(SchemeVariant v) {
  return v == SchemeVariant::TwoGroup ? "two" : "three";
}

inline std::optional<SchemeVariant> parse_scheme_variant(std::string_view s) {
  if (s == "two") return SchemeVariant::TwoGroup;
  if (s == "three") return SchemeVariant::ThreeGroup;
  return std::nullopt;
}

struct MemberGroup {
  std::string id;
  std::vector<int> slots;
};

/// Partition of the 11 member slots into exchangeable groups. Members within
/// a group share bias coefficients and weight.
class GroupScheme {
public:
  static GroupScheme two_group() {
    return GroupScheme{SchemeVariant::TwoGroup,
                       {{"control", {0}},
                        {"exchangeable", {1, 2, 3, 4, 5, 6, 7, 8, 9, 10}}}};
  }

  static GroupScheme three_group() {
    return GroupScheme{SchemeVariant::ThreeGroup,
                       {{"control", {0}},
                        {"odd", {1, 3, 5, 7, 9}},
                        {"even", {2, 4, 6, 8, 10}}}};
  }

  static GroupScheme make(SchemeVariant v) {
    return v == SchemeVariant::TwoGroup ? two_group() : three_group();
  }

  SchemeVariant variant() const { return variant_; }
  const std::vector<MemberGroup>& groups() const { return groups_; }
  std::size_t group_count() const { return groups_.size(); }
  std::size_t group_size(std::size_t g) const { return groups_[g].slots.size(); }

  /// Index into groups() of the group owning `slot`.
  int group_of_slot(int slot) const { return slot_group_[size_t(slot)]; }

  bool operator==(const GroupScheme& o) const {
    return variant_ == o.variant_;
  }

private:
  GroupScheme(SchemeVariant v, std::vector<MemberGroup> groups)
      : variant_(v), groups_(std::move(groups)) {
    slot_group_.fill(-1);
    for (std::size_t g = 0; g < groups_.size(); ++g) {
      for (int s : groups_[g].slots) {
        if (s < 0 || s >= kEnsembleMembers || slot_group_[size_t(s)] != -1)
          throw Error("group scheme is not a partition of the member slots");
        slot_group_[size_t(s)] = int(g);
      }
    }
    for (int s = 0; s < kEnsembleMembers; ++s)
      if (slot_group_[size_t(s)] == -1)
        throw Error("group scheme leaves a member slot unassigned");
  }

  SchemeVariant variant_;
  std::vector<MemberGroup> groups_;
  std::array<int, kEnsembleMembers> slot_group_{};
};

struct GroupedMember {
  int group;  // index into scheme.groups()
  int slot;
  double value;
};

/// All present members of `c`, tagged with their group, in group order and
/// slot order within each group. Absent slots are silently skipped.
inline std::vector<GroupedMember> group_members(const ForecastCase& c,
                                                const GroupScheme& scheme) {
  if (c.empty())
    throw EmptyInputError("group_members: case has no forecast values");
  std::vector<GroupedMember> out;
  out.reserve(size_t(c.present_members()));
  for (std::size_t g = 0; g < scheme.group_count(); ++g)
    for (int s : scheme.groups()[g].slots)
      if (c.member(s).has_value())
        out.push_back({int(g), s, *c.member(s)});
  return out;
}

}  // namespace ensbma

#endif  // ENSBMA_TYPES_HPP
