// Copyright 2026 The audioret Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include "audioret/autograd.hpp"
#include "audioret/bench.hpp"
#include "audioret/config.hpp"
#include "audioret/corpus.hpp"
#include "audioret/error.hpp"
#include "audioret/evaluation.hpp"
#include "audioret/experts.hpp"
#include "audioret/io.hpp"
#include "audioret/loss.hpp"
#include "audioret/models.hpp"
#include "audioret/optim.hpp"
#include "audioret/params.hpp"
#include "audioret/random.hpp"
#include "audioret/synthetic.hpp"
#include "audioret/text.hpp"
#include "audioret/training.hpp"
