#pragma once

#include <string>
#include <vector>

#include "nest/seqset.hpp"

namespace nest {

// Builds per-user basket streams from the Instacart CSV pair. Baskets are
// ordered by order_number; set time is the cumulative days_since_prior_order
// (missing value counts as 0); items become tokens "product_{id}". Users are
// subsampled deterministically by hash of user_id.
std::vector<RawSubject> ingest_instacart(const std::string& orders_csv,
                                         const std::string& order_products_csv,
                                         double sample_fraction);

}  // namespace nest
