#pragma once

#include <string_view>

namespace mmfn::assets {

// Contents of assets/prompts.txt and assets/stopwords.txt, embedded at build time.
std::string_view prompts();
std::string_view stopwords();

}  // namespace mmfn::assets
