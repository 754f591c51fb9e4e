#ifndef LODSEG_VOLUME_CLASS_SCHEME_HPP
#define LODSEG_VOLUME_CLASS_SCHEME_HPP

#include <algorithm>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "lodseg/core/error.hpp"

namespace lodseg {

// Ordered class names; position in the list is the channel index.
class ClassScheme {
 public:
  ClassScheme() : ClassScheme(std::vector<std::string>{"background", "foreground"}) {}

  explicit ClassScheme(std::vector<std::string> names, std::string preset = {})
      : names_(std::move(names)), preset_(std::move(preset)) {
    detail::require<ConfigError>(names_.size() >= 2, "class scheme needs at least two classes");
    detail::require<ConfigError>(names_.front() == "background",
                                 "class scheme index 0 must be \"background\", got \"" + names_.front() + "\"");
    std::set<std::string> seen(names_.begin(), names_.end());
    detail::require<ConfigError>(seen.size() == names_.size(), "class scheme names must be unique");
  }

  // Whole-head scheme with seven output channels. CSF and ventricles share
  // one channel so that background fits.
  static ClassScheme raw7() {
    return ClassScheme({"background", "gray_matter", "white_matter", "csf", "cerebellum", "brainstem",
                        "basal_ganglia"},
                       "raw7");
  }

  // Background plus the seven tissue classes.
  static ClassScheme raw8() {
    return ClassScheme({"background", "gray_matter", "white_matter", "csf", "ventricles", "cerebellum",
                        "brainstem", "basal_ganglia"},
                       "raw8");
  }

  static ClassScheme skullstripped4() {
    return ClassScheme({"background", "csf", "gray_matter", "white_matter"}, "ss4");
  }

  static ClassScheme preset(std::string_view name) {
    if (name == "raw7") return raw7();
    if (name == "raw8") return raw8();
    if (name == "ss4" || name == "skullstripped4") return skullstripped4();
    throw ConfigError("unknown class scheme preset \"" + std::string(name) + "\" (expected raw7, raw8, ss4)");
  }

  // Preset whose channel count matches, used when only a count is known.
  static ClassScheme for_count(int num_classes) {
    if (num_classes == 7) return raw7();
    if (num_classes == 8) return raw8();
    if (num_classes == 4) return skullstripped4();
    std::vector<std::string> names{"background"};
    for (int c = 1; c < num_classes; ++c) names.push_back("class_" + std::to_string(c));
    return ClassScheme(std::move(names));
  }

  int num_classes() const { return static_cast<int>(names_.size()); }
  const std::vector<std::string>& names() const { return names_; }
  const std::string& name(int c) const { return names_.at(static_cast<std::size_t>(c)); }
  const std::string& preset_name() const { return preset_; }

  int index_of(std::string_view name) const {
    auto it = std::find(names_.begin(), names_.end(), name);
    if (it == names_.end()) return -1;
    return static_cast<int>(it - names_.begin());
  }

  friend bool operator==(const ClassScheme& a, const ClassScheme& b) { return a.names_ == b.names_; }

 private:
  std::vector<std::string> names_;
  std::string preset_;
};

}  // namespace lodseg

#endif  // LODSEG_VOLUME_CLASS_SCHEME_HPP
