// keyhunt.hpp - umbrella header

#ifndef KEYHUNT_KEYHUNT_HPP
#define KEYHUNT_KEYHUNT_HPP

#include "aes.hpp"
#include "bruteforce.hpp"
#include "core.hpp"
#include "dataset.hpp"
#include "eval.hpp"
#include "forest.hpp"
#include "pcap.hpp"
#include "pipeline.hpp"
#include "preprocess.hpp"
#include "validate.hpp"

#endif  // KEYHUNT_KEYHUNT_HPP
