#pragma once

#include "prodretrieve/embed_store.hpp"
#include "prodretrieve/ensemble.hpp"
#include "prodretrieve/error.hpp"
#include "prodretrieve/evalbench.hpp"
#include "prodretrieve/harness.hpp"
#include "prodretrieve/pseudolabel.hpp"
#include "prodretrieve/ranking_io.hpp"
#include "prodretrieve/rerank.hpp"
#include "prodretrieve/search_core.hpp"
#include "prodretrieve/sharding.hpp"
#include "prodretrieve/sidecar.hpp"
