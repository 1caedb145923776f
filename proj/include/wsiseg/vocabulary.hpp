#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>

#include "errors.hpp"

namespace wsiseg {

// Instance classes segmented by the upstream model.
enum class InstanceClass : std::uint8_t { glomerulus = 0, arteriole = 1, artery = 2 };

inline constexpr std::size_t kNumClasses = 3;
inline constexpr std::array<InstanceClass, kNumClasses> kAllClasses = {
    InstanceClass::glomerulus, InstanceClass::arteriole, InstanceClass::artery};

inline constexpr std::size_t class_index(InstanceClass c) { return static_cast<std::size_t>(c); }

inline std::string_view class_name(InstanceClass c) {
    switch (c) {
        case InstanceClass::glomerulus: return "Glomerulus";
        case InstanceClass::arteriole: return "Arteriole";
        case InstanceClass::artery: return "Artery";
    }
    return "?";
}

inline std::optional<InstanceClass> try_parse_class(std::string_view name) {
    for (auto c : kAllClasses)
        if (class_name(c) == name) return c;
    return std::nullopt;
}

inline InstanceClass parse_class(std::string_view name) {
    if (auto c = try_parse_class(name)) return *c;
    throw VocabularyError("unknown instance class '" + std::string(name) + "'");
}

// Full annotation vocabulary, including tissue compartments and artefact regions.
enum class AnnotationKind { instance, cortex, medulla, capsule_other, ignore };

struct AnnotationLabel {
    AnnotationKind kind = AnnotationKind::instance;
    InstanceClass instance_class = InstanceClass::glomerulus;  // valid when kind == instance
};

inline std::optional<AnnotationLabel> try_parse_annotation_label(std::string_view name) {
    if (auto c = try_parse_class(name)) return AnnotationLabel{AnnotationKind::instance, *c};
    if (name == "Cortex") return AnnotationLabel{AnnotationKind::cortex, {}};
    if (name == "Medulla") return AnnotationLabel{AnnotationKind::medulla, {}};
    if (name == "Capsule/Other") return AnnotationLabel{AnnotationKind::capsule_other, {}};
    if (name == "Ignore") return AnnotationLabel{AnnotationKind::ignore, {}};
    return std::nullopt;
}

inline std::string_view annotation_kind_name(AnnotationKind k) {
    switch (k) {
        case AnnotationKind::instance: return "instance";
        case AnnotationKind::cortex: return "Cortex";
        case AnnotationKind::medulla: return "Medulla";
        case AnnotationKind::capsule_other: return "Capsule/Other";
        case AnnotationKind::ignore: return "Ignore";
    }
    return "?";
}

}  // namespace wsiseg
