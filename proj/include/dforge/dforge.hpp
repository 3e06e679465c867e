// SPDX-License-Identifier: Apache-2.0
#pragma once

// Everything except the HTTP front end, which pulls in httplib.
#include "corpus.hpp"
#include "dpl.hpp"
#include "engine.hpp"
#include "error.hpp"
#include "loss.hpp"
#include "model_pool.hpp"
#include "summary.hpp"
#include "taxonomy.hpp"
#include "trainer.hpp"
