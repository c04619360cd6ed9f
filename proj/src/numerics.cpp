#include "cavqsd/numerics.hpp"

namespace cavqsd {

double quadrature_weight(int k, int n) {
    if (k < 0 || k > n) return 0.0;
    switch (n) {
        case 0:
            return 0.0;
        case 1:
            return 0.5;
        case 2: {
            static constexpr double w[] = {1.0 / 3, 4.0 / 3, 1.0 / 3};
            return w[k];
        }
        case 3: {
            static constexpr double w[] = {3.0 / 8, 9.0 / 8, 9.0 / 8, 3.0 / 8};
            return w[k];
        }
        case 4: {
            static constexpr double w[] = {1.0 / 3, 4.0 / 3, 2.0 / 3, 4.0 / 3, 1.0 / 3};
            return w[k];
        }
        default:
            break;
    }
    static constexpr double ends[] = {3.0 / 8, 7.0 / 6, 23.0 / 24};
    if (k < 3) return ends[k];
    if (n - k < 3) return ends[n - k];
    return 1.0;
}

}  // namespace cavqsd
