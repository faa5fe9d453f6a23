#include "sim2real/losses.hpp"

namespace sim2real {

SoftLabel soften(int hard_class, double epsilon) {
    if (hard_class < 0 || hard_class >= kSoftLabelSize) {
        throw InvalidInput("soften: class " + std::to_string(hard_class) + " out of range");
    }
    if (!(epsilon >= 0.0 && epsilon < 1.0)) {
        throw InvalidInput("soften: epsilon must lie in [0, 1)");
    }
    SoftLabel label;
    double center = 1.0 - epsilon;
    for (const int neighbor : {hard_class - 1, hard_class + 1}) {
        if (neighbor >= 0 && neighbor < kSoftLabelSize) {
            label.probs[neighbor] = epsilon / 2.0;
        } else {
            center += epsilon / 2.0;
        }
    }
    label.probs[hard_class] = center;
    return label;
}

}  // namespace sim2real
