# Phase routers
