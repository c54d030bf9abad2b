#pragma once

#include "egg/config.hpp"
#include "egg/corpus.hpp"
#include "egg/embed.hpp"
#include "egg/error.hpp"
#include "egg/eval.hpp"
#include "egg/genclient.hpp"
#include "egg/intent.hpp"
#include "egg/pipeline.hpp"
#include "egg/synth.hpp"
#include "egg/text.hpp"
#include "egg/toy.hpp"
#include "egg/train.hpp"
