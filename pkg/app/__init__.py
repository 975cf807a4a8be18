# Bifurcating Markov chain laboratory
