#pragma once

#include "mulde/checkpoint.hpp"
#include "mulde/dimbound.hpp"
#include "mulde/distill.hpp"
#include "mulde/error.hpp"
#include "mulde/eval.hpp"
#include "mulde/kgdata.hpp"
#include "mulde/manifold.hpp"
#include "mulde/models.hpp"
#include "mulde/optim.hpp"
